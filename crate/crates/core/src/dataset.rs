//! Benchmark ingestion: line-delimited question files, per-database SQLite
//! files, and schema introspection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// File extension of per-database files under the databases directory.
pub const DB_FILE_EXTENSION: &str = "sqlite";

/// Default number of distinct sample values captured per column.
pub const DEFAULT_SAMPLE_CAP: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate query id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: unknown db_id `{db_id}`")]
    UnknownDatabase {
        path: PathBuf,
        line: usize,
        db_id: String,
    },
    #[error("database `{0}` has no user tables")]
    EmptySchema(String),
    #[error("schema `{db_id}`: {message}")]
    InvalidSchema { db_id: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read database {path}: {source}")]
    Database {
        path: PathBuf,
        #[source]
        source: rusqlite::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Heldout,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Heldout => "heldout",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "heldout" => Ok(SplitName::Heldout),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlQuery {
    pub id: String,
    pub text: String,
    pub language: Language,
    pub db_id: String,
    pub gold_sql: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub name: SplitName,
    pub queries: Vec<NlQuery>,
}

impl Split {
    pub fn get(&self, id: &str) -> Option<&NlQuery> {
        self.queries.iter().find(|q| q.id == id)
    }
}

/// Wire record, one per line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    question: String,
    lang: Language,
    db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sql: Option<String>,
}

/// Loads a line-delimited split file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_split(
    path: &Path,
    name: SplitName,
    known_dbs: &BTreeSet<String>,
) -> Result<Split, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DatasetError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if record.id.trim().is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if record.question.trim().is_empty() {
            return Err(parse_err(format!("query `{}` has empty question", record.id)));
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: record.id,
            });
        }
        if !known_dbs.contains(&record.db_id) {
            return Err(DatasetError::UnknownDatabase {
                path: path.to_path_buf(),
                line: line_no,
                db_id: record.db_id,
            });
        }
        queries.push(NlQuery {
            id: record.id,
            text: record.question,
            language: record.lang,
            db_id: record.db_id,
            gold_sql: record.sql.filter(|s| !s.trim().is_empty()),
        });
    }
    Ok(Split { name, queries })
}

/// Writes a split in the same wire format `load_split` reads.
pub fn write_split(split: &Split, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = fs::File::create(path).map_err(io_err)?;
    for q in &split.queries {
        let record = Record {
            id: q.id.clone(),
            question: q.text.clone(),
            lang: q.language,
            db_id: q.db_id.clone(),
            sql: q.gold_sql.clone(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub foreign_table: String,
    pub foreign_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: String,
    pub sample_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Checks table/column uniqueness, primary keys, and foreign-key targets.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |message: String| DatasetError::InvalidSchema {
            db_id: self.db_id.clone(),
            message,
        };
        let mut tables = HashSet::new();
        for t in &self.tables {
            if !tables.insert(t.name.to_ascii_lowercase()) {
                return Err(bad(format!("duplicate table `{}`", t.name)));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_ascii_lowercase()) {
                    return Err(bad(format!("duplicate column `{}.{}`", t.name, c.name)));
                }
            }
            for pk in &t.primary_key {
                if t.column(pk).is_none() {
                    return Err(bad(format!("primary key `{}.{pk}` is not a column", t.name)));
                }
            }
        }
        for t in &self.tables {
            for fk in &t.foreign_keys {
                let target = self.table(&fk.foreign_table).and_then(|ft| ft.column(&fk.foreign_column));
                if target.is_none() {
                    return Err(bad(format!(
                        "foreign key `{}.{}` references missing `{}.{}`",
                        t.name, fk.column, fk.foreign_table, fk.foreign_column
                    )));
                }
            }
        }
        Ok(())
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Renders a stored value the way it appears in sample lists.
fn render_sample(value: ValueRef<'_>) -> Option<String> {
    match value {
        ValueRef::Null => None,
        ValueRef::Integer(i) => Some(i.to_string()),
        ValueRef::Real(r) => Some(r.to_string()),
        ValueRef::Text(t) => Some(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Some(format!("x'{}'", hex::encode(b))),
    }
}

pub fn open_read_only(db_path: &Path) -> Result<Connection, DatasetError> {
    let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI;
    Connection::open_with_flags(db_path, flags).map_err(|source| DatasetError::Database {
        path: db_path.to_path_buf(),
        source,
    })
}

pub fn introspect_schema(db_path: &Path) -> Result<DatabaseSchema, DatasetError> {
    introspect_schema_with_cap(db_path, DEFAULT_SAMPLE_CAP)
}

/// Reads every user table of the database. Sample values are the first
/// `sample_cap` distinct non-null values in rowid order (declaration order for
/// WITHOUT ROWID tables), so the result is a function of the file contents.
pub fn introspect_schema_with_cap(
    db_path: &Path,
    sample_cap: usize,
) -> Result<DatabaseSchema, DatasetError> {
    if !db_path.is_file() {
        return Err(DatasetError::Io {
            path: db_path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "database file not found"),
        });
    }
    let db_err = |source| DatasetError::Database {
        path: db_path.to_path_buf(),
        source,
    };
    let conn = open_read_only(db_path)?;
    let db_id = db_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut stmt = conn
        .prepare(
            "SELECT name, COALESCE(sql, '') FROM sqlite_master \
             WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid",
        )
        .map_err(db_err)?;
    let table_rows: Vec<(String, String)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))
        .map_err(db_err)?
        .collect::<Result<_, _>>()
        .map_err(db_err)?;

    let mut tables = Vec::with_capacity(table_rows.len());
    for (table, ddl) in table_rows {
        let without_rowid = ddl.to_ascii_uppercase().contains("WITHOUT ROWID");
        let mut info = conn
            .prepare(&format!("PRAGMA table_info({})", quote_ident(&table)))
            .map_err(db_err)?;
        let mut pk_cols: Vec<(i64, String)> = Vec::new();
        let mut columns = Vec::new();
        let rows: Vec<(String, String, i64)> = info
            .query_map([], |r| Ok((r.get(1)?, r.get(2)?, r.get(5)?)))
            .map_err(db_err)?
            .collect::<Result<_, _>>()
            .map_err(db_err)?;
        for (name, declared_type, pk) in rows {
            if pk > 0 {
                pk_cols.push((pk, name.clone()));
            }
            let order = if without_rowid { "" } else { " ORDER BY rowid" };
            let sql = format!(
                "SELECT {col} FROM {tab}{order}",
                col = quote_ident(&name),
                tab = quote_ident(&table)
            );
            let mut sample_stmt = conn.prepare(&sql).map_err(db_err)?;
            let mut cursor = sample_stmt.query([]).map_err(db_err)?;
            let mut samples: Vec<String> = Vec::new();
            while samples.len() < sample_cap {
                let Some(row) = cursor.next().map_err(db_err)? else { break };
                if let Some(v) = render_sample(row.get_ref(0).map_err(db_err)?) {
                    if !samples.contains(&v) {
                        samples.push(v);
                    }
                }
            }
            columns.push(ColumnDef {
                name,
                declared_type,
                sample_values: samples,
            });
        }
        pk_cols.sort();
        let primary_key: Vec<String> = pk_cols.into_iter().map(|(_, n)| n).collect();

        let mut fk_stmt = conn
            .prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&table)))
            .map_err(db_err)?;
        let fk_rows: Vec<(String, String, Option<String>)> = fk_stmt
            .query_map([], |r| Ok((r.get(2)?, r.get(3)?, r.get(4)?)))
            .map_err(db_err)?
            .collect::<Result<_, _>>()
            .map_err(db_err)?;
        let foreign_keys = fk_rows
            .into_iter()
            .map(|(foreign_table, column, to)| ForeignKey {
                column,
                foreign_column: to.unwrap_or_default(),
                foreign_table,
            })
            .collect::<Vec<_>>();
        tables.push(TableDef {
            name: table,
            columns,
            primary_key,
            foreign_keys,
        });
    }
    if tables.is_empty() {
        return Err(DatasetError::EmptySchema(db_id));
    }

    // Implicit foreign-key targets reference the target's primary key.
    let pks: BTreeMap<String, Vec<String>> = tables
        .iter()
        .map(|t| (t.name.to_ascii_lowercase(), t.primary_key.clone()))
        .collect();
    for t in &mut tables {
        for fk in &mut t.foreign_keys {
            if fk.foreign_column.is_empty() {
                if let Some(pk) = pks.get(&fk.foreign_table.to_ascii_lowercase()) {
                    fk.foreign_column = pk.first().cloned().unwrap_or_default();
                }
            }
        }
    }

    let schema = DatabaseSchema { db_id, tables };
    schema.validate()?;
    Ok(schema)
}

/// SHA-256 of the database file bytes, hex encoded.
pub fn file_content_hash(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Databases laid out as `<dir>/<db_id>/<db_id>.sqlite`.
#[derive(Debug, Clone)]
pub struct DatabaseCatalog {
    root: PathBuf,
    ids: BTreeSet<String>,
}

impl DatabaseCatalog {
    pub fn discover(root: &Path) -> Result<Self, DatasetError> {
        let io_err = |source| DatasetError::Io {
            path: root.to_path_buf(),
            source,
        };
        let mut ids = BTreeSet::new();
        for entry in fs::read_dir(root).map_err(io_err)? {
            let entry = entry.map_err(io_err)?;
            if !entry.path().is_dir() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            if db_file_path(root, &id).is_file() {
                ids.insert(id);
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            ids,
        })
    }

    pub fn ids(&self) -> &BTreeSet<String> {
        &self.ids
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, db_id: &str) -> Option<PathBuf> {
        self.ids.contains(db_id).then(|| db_file_path(&self.root, db_id))
    }
}

pub fn db_file_path(root: &Path, db_id: &str) -> PathBuf {
    root.join(db_id).join(format!("{db_id}.{DB_FILE_EXTENSION}"))
}

/// Creates `<root>/<db_id>/<db_id>.sqlite` from a SQL script, replacing any
/// existing file.
pub fn build_database(root: &Path, db_id: &str, script: &str) -> Result<PathBuf, DatasetError> {
    let path = db_file_path(root, db_id);
    let dir = path.parent().expect("db path has a parent");
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    if path.exists() {
        fs::remove_file(&path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
    }
    let db_err = |source| DatasetError::Database {
        path: path.clone(),
        source,
    };
    let conn = Connection::open(&path).map_err(db_err)?;
    conn.execute_batch(script).map_err(db_err)?;
    Ok(path)
}
