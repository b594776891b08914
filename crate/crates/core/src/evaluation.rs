//! Scoring: per-query verdicts, VA/EX aggregation and the run report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Language, NlQuery};
use crate::executor::{check_validity_at, execute, fingerprint, has_top_level_order_by, ExecutionOutcome};
use crate::sql_agent::SqlCandidate;
use crate::voting::{Decision, VoteRecord};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold SQL for query {query_id} failed: {message}")]
    GoldFailed { query_id: String, message: String },
    #[error("query {0} has no gold SQL")]
    MissingGold(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryVerdict {
    pub query_id: String,
    pub language: Language,
    pub question: String,
    pub gold_sql: String,
    pub final_sql: String,
    /// Prepare success of the final SQL.
    pub valid: bool,
    pub executed_ok: bool,
    pub exec_match: bool,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_digest: Option<String>,
    pub gold_digest: String,
}

impl QueryVerdict {
    pub fn check_invariants(&self) -> Result<(), EvalError> {
        if self.exec_match && !(self.executed_ok && self.valid) {
            return Err(EvalError::Contract(format!("{}: match without a valid, executed query", self.query_id)));
        }
        Ok(())
    }
}

/// Half-up rounding of `100 * n / d` to two decimals, in integer arithmetic.
pub fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let (n, d) = (n as u128, d as u128);
    let hundredths = (20_000 * n + d) / (2 * d);
    hundredths as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub queries: usize,
    pub valid: usize,
    pub executed: usize,
    pub matched: usize,
    pub va_percent: f64,
    /// Execution-success variant of VA.
    pub exec_va_percent: f64,
    pub ex_percent: f64,
}

impl Score {
    fn of<'a>(verdicts: impl IntoIterator<Item = &'a QueryVerdict>) -> Self {
        let (mut queries, mut valid, mut executed, mut matched) = (0, 0, 0, 0);
        for v in verdicts {
            queries += 1;
            valid += usize::from(v.valid);
            executed += usize::from(v.executed_ok);
            matched += usize::from(v.exec_match);
        }
        Self {
            queries,
            valid,
            executed,
            matched,
            va_percent: percent(valid, queries),
            exec_va_percent: percent(executed, queries),
            ex_percent: percent(matched, queries),
        }
    }
}

/// Ablation switches; each removes one pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    #[serde(default)]
    pub no_planner: bool,
    #[serde(default)]
    pub no_guidelines: bool,
    #[serde(default)]
    pub no_icl: bool,
    #[serde(default)]
    pub single_plan: bool,
}

impl AblationFlags {
    pub fn names(&self) -> BTreeSet<String> {
        [
            ("no_planner", self.no_planner),
            ("no_guidelines", self.no_guidelines),
            ("no_icl", self.no_icl),
            ("single_plan", self.single_plan),
        ]
        .into_iter()
        .filter(|(_, on)| *on)
        .map(|(n, _)| n.to_string())
        .collect()
    }

    /// Row label in the ablation table.
    pub fn label(&self) -> String {
        let names = self.names();
        if names.is_empty() {
            "default".into()
        } else {
            names.into_iter().collect::<Vec<_>>().join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub split: String,
    pub model_name: String,
    pub ablation_flags: BTreeSet<String>,
    pub zh_mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub model_name: String,
    pub ablation_flags: BTreeSet<String>,
    pub zh_mode: String,
    pub va_percent: f64,
    pub exec_va_percent: f64,
    pub ex_percent: f64,
    pub overall: Score,
    pub per_language: BTreeMap<Language, Score>,
    pub verdicts: Vec<QueryVerdict>,
    #[serde(default)]
    pub votes: Vec<VoteRecord>,
}

impl EvalReport {
    pub fn verdict(&self, query_id: &str) -> Option<&QueryVerdict> {
        self.verdicts.iter().find(|v| v.query_id == query_id)
    }

    pub fn vote(&self, query_id: &str) -> Option<&VoteRecord> {
        self.votes.iter().find(|v| v.query_id == query_id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, run_dir: &Path) -> Result<(), EvalError> {
        let path = run_dir.join(REPORT_FILE);
        fs::write(&path, self.to_json()).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(run_dir: &Path) -> Result<Self, EvalError> {
        let path = run_dir.join(REPORT_FILE);
        let io = |message: String| EvalError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(&path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// Verdicts keep their given order; votes are attached as-is.
pub fn aggregate(verdicts: Vec<QueryVerdict>, votes: Vec<VoteRecord>, meta: ReportMeta) -> Result<EvalReport, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Contract("no verdicts to aggregate".into()));
    }
    for v in &verdicts {
        v.check_invariants()?;
    }
    let overall = Score::of(&verdicts);
    let mut per_language = BTreeMap::new();
    for lang in verdicts.iter().map(|v| v.language).collect::<BTreeSet<_>>() {
        per_language.insert(lang, Score::of(verdicts.iter().filter(|v| v.language == lang)));
    }
    Ok(EvalReport {
        split: meta.split,
        model_name: meta.model_name,
        ablation_flags: meta.ablation_flags,
        zh_mode: meta.zh_mode,
        va_percent: overall.va_percent,
        exec_va_percent: overall.exec_va_percent,
        ex_percent: overall.ex_percent,
        overall,
        per_language,
        verdicts,
        votes,
    })
}

/// Executed gold result plus its order rule.
#[derive(Debug, Clone)]
pub struct GoldResult {
    pub outcome: ExecutionOutcome,
    pub order_sensitive: bool,
    pub digest: String,
}

/// Gold results keyed by (database content hash, gold SQL).
#[derive(Debug, Default)]
pub struct GoldCache {
    entries: Mutex<HashMap<(String, String), Arc<GoldResult>>>,
}

impl GoldCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("gold cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(
        &self,
        query_id: &str,
        gold_sql: &str,
        db_path: &Path,
        db_hash: &str,
        timeout_ms: u64,
    ) -> Result<Arc<GoldResult>, EvalError> {
        let key = (db_hash.to_string(), gold_sql.to_string());
        if let Some(hit) = self.entries.lock().expect("gold cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let outcome = execute(gold_sql, db_path, timeout_ms);
        if !outcome.is_ok() {
            return Err(EvalError::GoldFailed {
                query_id: query_id.to_string(),
                message: outcome.error_message.unwrap_or_default(),
            });
        }
        let order_sensitive = has_top_level_order_by(gold_sql);
        let digest = fingerprint(&outcome, order_sensitive)
            .map_err(|e| EvalError::Contract(e.to_string()))?
            .digest;
        let result = Arc::new(GoldResult {
            outcome,
            order_sensitive,
            digest,
        });
        self.entries
            .lock()
            .expect("gold cache lock")
            .insert(key, result.clone());
        Ok(result)
    }
}

/// Scores one final candidate against the gold result. `outcome` is the
/// candidate's execution when already available.
pub fn judge(
    query: &NlQuery,
    final_candidate: &SqlCandidate,
    decision: Decision,
    outcome: Option<&ExecutionOutcome>,
    gold: &GoldResult,
    db_path: &Path,
    timeout_ms: u64,
) -> QueryVerdict {
    let gold_sql = query.gold_sql.clone().unwrap_or_default();
    let (valid, validity_message) = if final_candidate.is_usable() {
        let v = check_validity_at(&final_candidate.sql, db_path);
        (v.valid, v.message)
    } else {
        (false, final_candidate.error.clone())
    };
    let owned;
    let outcome = match outcome {
        Some(o) => Some(o),
        None if valid => {
            owned = execute(&final_candidate.sql, db_path, timeout_ms);
            Some(&owned)
        }
        None => None,
    };
    let predicted_digest = outcome
        .filter(|o| o.is_ok())
        .and_then(|o| fingerprint(o, gold.order_sensitive).ok())
        .map(|f| f.digest);
    let executed_ok = predicted_digest.is_some();
    let exec_match = valid && predicted_digest.as_deref() == Some(gold.digest.as_str());
    QueryVerdict {
        query_id: query.id.clone(),
        language: query.language,
        question: query.text.clone(),
        gold_sql,
        final_sql: final_candidate.sql.clone(),
        valid,
        executed_ok,
        exec_match,
        decision,
        validity_message,
        predicted_digest,
        gold_digest: gold.digest.clone(),
    }
}

/// Compact ablation table: one row per report.
pub fn render_table(rows: &[&EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>8} {:>8}", "setting", "EN EX", "ZH EX", "VA", "EX");
    for r in rows {
        let lang = |l: Language| {
            r.per_language
                .get(&l)
                .map_or_else(|| "-".to_string(), |s| format!("{:.2}", s.ex_percent))
        };
        let mut parts: Vec<String> = r.ablation_flags.iter().cloned().collect();
        if r.zh_mode != "direct" {
            parts.push(format!("zh={}", r.zh_mode));
        }
        let label = if parts.is_empty() { "default".to_string() } else { parts.join("+") };
        let _ = writeln!(
            out,
            "{:<28} {:>8} {:>8} {:>8.2} {:>8.2}",
            format!("{label} ({})", r.split),
            lang(Language::En),
            lang(Language::Zh),
            r.va_percent,
            r.ex_percent
        );
    }
    out
}
