//! Sandboxed SQL execution, result normalization and fingerprints.

mod sqltext;

use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use sqltext::{has_top_level_order_by, is_blank, split_first_statement};

use crate::dataset::open_read_only;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
/// Fractional digits kept when rendering decimals.
pub const DECIMAL_DIGITS: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SyntaxError,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizedValue {
    Null,
    Integer(i64),
    Decimal(String),
    Text(String),
    Blob(String),
}

/// Renders a float with [`DECIMAL_DIGITS`] fractional digits, trailing zeros
/// and a trailing point trimmed, and negative zero folded to zero.
pub fn render_decimal(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let mut s = format!("{:.*}", DECIMAL_DIGITS, x);
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

impl NormalizedValue {
    pub fn from_sqlite(value: ValueRef<'_>) -> Self {
        match value {
            ValueRef::Null => Self::Null,
            ValueRef::Integer(i) => Self::Integer(i),
            ValueRef::Real(r) => Self::Decimal(render_decimal(r)),
            ValueRef::Text(t) => Self::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Self::Blob(hex::encode(b)),
        }
    }

    /// Integers and decimals share one numeric form, so `2` and `2.0` compare
    /// equal.
    fn canonical(&self) -> Canon<'_> {
        match self {
            Self::Null => Canon::Null,
            Self::Integer(i) => Canon::Num(i.to_string().into()),
            Self::Decimal(d) => Canon::Num(d.as_str().into()),
            Self::Text(t) => Canon::Text(t),
            Self::Blob(b) => Canon::Blob(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
enum Canon<'a> {
    Null,
    Num(std::borrow::Cow<'a, str>),
    Text(&'a str),
    Blob(&'a str),
}

pub type Row = Vec<NormalizedValue>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Row>>,
    /// Result width; kept separately so empty results still carry it.
    #[serde(default)]
    pub columns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    /// Wall-clock timing; left out of serialized reports.
    #[serde(skip)]
    pub elapsed_ms: u64,
}

impl ExecutionOutcome {
    pub fn failure(status: ExecStatus, message: impl Into<String>, elapsed_ms: u64) -> Self {
        Self {
            status,
            rows: None,
            columns: 0,
            error_message: Some(message.into()),
            elapsed_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    pub fn check_invariants(&self) -> Result<(), ExecError> {
        match (&self.status, &self.rows) {
            (ExecStatus::Ok, Some(rows)) => {
                if rows.iter().any(|r| r.len() != self.columns) {
                    return Err(ExecError::Contract("non-uniform row width".into()));
                }
                Ok(())
            }
            (ExecStatus::Ok, None) => Err(ExecError::Contract("ok outcome without rows".into())),
            (_, Some(_)) => Err(ExecError::Contract("failed outcome with rows".into())),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResultFingerprint {
    pub digest: String,
}

/// Canonical serialization of an ok outcome: width plus rows, sorted unless
/// `order_sensitive`.
pub fn canonical_serialization(outcome: &ExecutionOutcome, order_sensitive: bool) -> Result<Vec<u8>, ExecError> {
    let rows = match (&outcome.status, &outcome.rows) {
        (ExecStatus::Ok, Some(rows)) => rows,
        _ => return Err(ExecError::Contract("fingerprint of a non-ok outcome".into())),
    };
    let mut canon: Vec<Vec<Canon<'_>>> = rows.iter().map(|r| r.iter().map(NormalizedValue::canonical).collect()).collect();
    if !order_sensitive {
        canon.sort();
    }
    let doc = serde_json::json!({ "width": outcome.columns, "rows": canon });
    Ok(serde_json::to_vec(&doc).expect("canonical rows serialize"))
}

pub fn fingerprint(outcome: &ExecutionOutcome, order_sensitive: bool) -> Result<ResultFingerprint, ExecError> {
    let bytes = canonical_serialization(outcome, order_sensitive)?;
    Ok(ResultFingerprint {
        digest: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityCheck {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ValidityCheck {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            valid: false,
            message: Some(message.into()),
        }
    }
}

/// Prepares (never runs) a single statement. More than one statement, or
/// none, is invalid.
pub fn check_validity(sql: &str, conn: &Connection) -> ValidityCheck {
    let (first, rest) = split_first_statement(sql);
    if is_blank(first) {
        return ValidityCheck::invalid("empty statement");
    }
    if !is_blank(rest) {
        return ValidityCheck::invalid("multiple statements");
    }
    match conn.prepare(first) {
        Ok(_) => ValidityCheck {
            valid: true,
            message: None,
        },
        Err(e) => ValidityCheck::invalid(e.to_string()),
    }
}

/// [`check_validity`] on a fresh read-only connection.
pub fn check_validity_at(sql: &str, db_path: &Path) -> ValidityCheck {
    match open_read_only(db_path) {
        Ok(conn) => check_validity(sql, &conn),
        Err(e) => ValidityCheck::invalid(e.to_string()),
    }
}

fn elapsed(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Runs one statement on a fresh read-only connection. Never panics or errors
/// past the outcome; write statements are refused without running.
pub fn execute(sql: &str, db_path: &Path, timeout_ms: u64) -> ExecutionOutcome {
    let start = Instant::now();
    let conn = match open_read_only(db_path) {
        Ok(c) => c,
        Err(e) => return ExecutionOutcome::failure(ExecStatus::RuntimeError, e.to_string(), elapsed(start)),
    };
    let validity = check_validity(sql, &conn);
    if !validity.valid {
        let msg = validity.message.unwrap_or_default();
        return ExecutionOutcome::failure(ExecStatus::SyntaxError, msg, elapsed(start));
    }
    let (first, _) = split_first_statement(sql);
    let mut stmt = match conn.prepare(first) {
        Ok(s) => s,
        Err(e) => return ExecutionOutcome::failure(ExecStatus::SyntaxError, e.to_string(), elapsed(start)),
    };
    if !stmt.readonly() {
        return ExecutionOutcome::failure(
            ExecStatus::RuntimeError,
            "attempt to write a readonly database: statement refused by sandbox",
            elapsed(start),
        );
    }
    let deadline = start + Duration::from_millis(timeout_ms.max(1));
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));

    let columns = stmt.column_count();
    let result = (|| -> rusqlite::Result<Vec<Row>> {
        let mut out = Vec::new();
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            let mut values = Vec::with_capacity(columns);
            for i in 0..columns {
                values.push(NormalizedValue::from_sqlite(row.get_ref(i)?));
            }
            out.push(values);
        }
        Ok(out)
    })();
    let outcome = match result {
        Ok(rows) => ExecutionOutcome {
            status: ExecStatus::Ok,
            rows: Some(rows),
            columns,
            error_message: None,
            elapsed_ms: elapsed(start),
        },
        Err(e) => {
            let interrupted = e.sqlite_error_code() == Some(ErrorCode::OperationInterrupted);
            let status = if interrupted || Instant::now() >= deadline {
                ExecStatus::Timeout
            } else {
                ExecStatus::RuntimeError
            };
            ExecutionOutcome::failure(status, e.to_string(), elapsed(start))
        }
    };
    drop(stmt);
    conn.progress_handler(0, None::<fn() -> bool>);
    outcome
}
