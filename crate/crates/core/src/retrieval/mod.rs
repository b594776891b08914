//! Top-k schema element retrieval and in-context example selection.

pub mod tfidf;

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatabaseSchema, Language};
use crate::gateway::{HttpTransport, TransportError};
use tfidf::{sparse_cosine, SparseVector, TfidfModel};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retrieval backend error: {0}")]
    Backend(String),
    #[error("retrieval config error: {0}")]
    Config(String),
    #[error("cannot index an empty schema for `{0}`")]
    EmptySchema(String),
    #[error("index cache i/o on {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Table,
    Column,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaElement {
    pub db_id: String,
    pub kind: ElementKind,
    /// `table` or `table.column`.
    pub qualified_name: String,
    pub descriptor_text: String,
}

impl SchemaElement {
    pub fn table_name(&self) -> &str {
        self.qualified_name
            .split_once('.')
            .map_or(self.qualified_name.as_str(), |(t, _)| t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub question: String,
    pub gold_sql: String,
    pub language: Language,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_top_k")]
    pub schema_top_k: usize,
    #[serde(default = "default_top_m")]
    pub icl_top_m: usize,
}

fn default_top_k() -> usize {
    5
}

fn default_top_m() -> usize {
    3
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            schema_top_k: default_top_k(),
            icl_top_m: default_top_m(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.schema_top_k == 0 {
            return Err(RetrievalError::Config("schema_top_k must be at least 1".into()));
        }
        if self.icl_top_m == 0 {
            return Err(RetrievalError::Config("icl_top_m must be at least 1".into()));
        }
        Ok(())
    }
}

/// Remote dense embedding model.
pub trait DenseEmbedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError>;
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    pub endpoint: String,
    pub model: String,
    pub dimension: usize,
    credential: String,
    transport: Box<dyn HttpTransport>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        credential: String,
        transport: Box<dyn HttpTransport>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            dimension,
            credential,
            transport,
        }
    }
}

impl DenseEmbedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = self
            .transport
            .post_json(&self.endpoint, &self.credential, &body)
            .map_err(|e| match e {
                TransportError::Transient(m) | TransportError::Fatal(m) => RetrievalError::Backend(m),
            })?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| RetrievalError::Backend("embedding response has no data array".into()))?;
        data.iter()
            .map(|item| {
                item.get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| RetrievalError::Backend("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| RetrievalError::Backend("non-numeric embedding".into())))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderBackend {
    LlmApi,
    LexicalFallback,
}

impl fmt::Display for EmbedderBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderBackend::LlmApi => "llm_api",
            EmbedderBackend::LexicalFallback => "lexical_fallback",
        })
    }
}

#[derive(Clone)]
pub enum Embedder {
    /// Character-trigram TF-IDF; no network.
    LexicalFallback,
    Api(Arc<dyn DenseEmbedder>),
}

impl fmt::Debug for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Embedder({})", self.backend())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vector {
    Sparse(SparseVector),
    Dense(Vec<f64>),
}

/// Query-side state captured at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorModel {
    Tfidf(TfidfModel),
    Dense { dimension: usize },
}

fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn cosine(a: &Vector, b: &Vector) -> f64 {
    match (a, b) {
        (Vector::Sparse(x), Vector::Sparse(y)) => sparse_cosine(x, y),
        (Vector::Dense(x), Vector::Dense(y)) => dense_cosine(x, y),
        _ => 0.0,
    }
}

impl Embedder {
    pub fn backend(&self) -> EmbedderBackend {
        match self {
            Embedder::LexicalFallback => EmbedderBackend::LexicalFallback,
            Embedder::Api(_) => EmbedderBackend::LlmApi,
        }
    }

    fn dense(api: &dyn DenseEmbedder, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let dim = api.dimension();
        if dim == 0 {
            return Err(RetrievalError::Backend("embedding dimension must be positive".into()));
        }
        let out = api.embed(texts)?;
        if out.len() != texts.len() {
            return Err(RetrievalError::Backend(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                out.len()
            )));
        }
        if let Some(bad) = out.iter().find(|v| v.len() != dim) {
            return Err(RetrievalError::Backend(format!(
                "dimension mismatch: expected {dim}, got {}",
                bad.len()
            )));
        }
        Ok(out)
    }

    /// Embeds a corpus and returns the model needed to embed queries against it.
    pub fn fit(&self, docs: &[String]) -> Result<(VectorModel, Vec<Vector>), RetrievalError> {
        match self {
            Embedder::LexicalFallback => {
                let model = TfidfModel::fit(docs);
                let vectors = docs.iter().map(|d| Vector::Sparse(model.transform(d))).collect();
                Ok((VectorModel::Tfidf(model), vectors))
            }
            Embedder::Api(api) => {
                let vectors = Self::dense(api.as_ref(), docs)?.into_iter().map(Vector::Dense).collect();
                Ok((
                    VectorModel::Dense {
                        dimension: api.dimension(),
                    },
                    vectors,
                ))
            }
        }
    }

    pub fn embed_query(&self, model: &VectorModel, text: &str) -> Result<Vector, RetrievalError> {
        match (self, model) {
            (Embedder::LexicalFallback, VectorModel::Tfidf(m)) => Ok(Vector::Sparse(m.transform(text))),
            (Embedder::Api(api), VectorModel::Dense { dimension }) => {
                if api.dimension() != *dimension {
                    return Err(RetrievalError::Backend(format!(
                        "index built with dimension {dimension}, embedder has {}",
                        api.dimension()
                    )));
                }
                let mut v = Self::dense(api.as_ref(), &[text.to_string()])?;
                Ok(Vector::Dense(v.pop().expect("one embedding")))
            }
            _ => Err(RetrievalError::Backend(format!(
                "index was not built with the {} backend",
                self.backend()
            ))),
        }
    }
}

/// Builds the text a schema element is matched and rendered by.
pub fn schema_elements(schema: &DatabaseSchema) -> Vec<SchemaElement> {
    let mut out = Vec::with_capacity(schema.tables.len() + schema.column_count());
    for t in &schema.tables {
        let cols = t
            .columns
            .iter()
            .map(|c| {
                if c.declared_type.is_empty() {
                    c.name.clone()
                } else {
                    format!("{} {}", c.name, c.declared_type)
                }
            })
            .collect::<Vec<_>>()
            .join(", ");
        let mut desc = format!("table {} ({cols})", t.name);
        if !t.primary_key.is_empty() {
            desc.push_str(&format!("; primary key: {}", t.primary_key.join(", ")));
        }
        if !t.foreign_keys.is_empty() {
            let fks = t
                .foreign_keys
                .iter()
                .map(|fk| format!("{} -> {}.{}", fk.column, fk.foreign_table, fk.foreign_column))
                .collect::<Vec<_>>()
                .join(", ");
            desc.push_str(&format!("; foreign keys: {fks}"));
        }
        out.push(SchemaElement {
            db_id: schema.db_id.clone(),
            kind: ElementKind::Table,
            qualified_name: t.name.clone(),
            descriptor_text: desc,
        });
        for c in &t.columns {
            let mut desc = format!("column {}.{}", t.name, c.name);
            if !c.declared_type.is_empty() {
                desc.push(' ');
                desc.push_str(&c.declared_type);
            }
            if !c.sample_values.is_empty() {
                let samples = c
                    .sample_values
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                desc.push_str(&format!("; sample values: {samples}"));
            }
            out.push(SchemaElement {
                db_id: schema.db_id.clone(),
                kind: ElementKind::Column,
                qualified_name: format!("{}.{}", t.name, c.name),
                descriptor_text: desc,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaIndex {
    pub db_id: String,
    pub backend: EmbedderBackend,
    pub elements: Vec<SchemaElement>,
    pub model: VectorModel,
    pub vectors: Vec<Vector>,
}

pub fn index_schema(schema: &DatabaseSchema, embedder: &Embedder) -> Result<SchemaIndex, RetrievalError> {
    if schema.tables.is_empty() {
        return Err(RetrievalError::EmptySchema(schema.db_id.clone()));
    }
    let elements = schema_elements(schema);
    let docs: Vec<String> = elements.iter().map(|e| e.descriptor_text.clone()).collect();
    let (model, vectors) = embedder.fit(&docs)?;
    Ok(SchemaIndex {
        db_id: schema.db_id.clone(),
        backend: embedder.backend(),
        elements,
        model,
        vectors,
    })
}

/// Descending score, then ascending name.
fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl SchemaIndex {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Every element with its similarity to `query_text`, best first.
    pub fn ranked(&self, embedder: &Embedder, query_text: &str) -> Result<Vec<(&SchemaElement, f64)>, RetrievalError> {
        let q = embedder.embed_query(&self.model, query_text)?;
        let mut scored: Vec<(&SchemaElement, f64)> = self
            .elements
            .iter()
            .zip(&self.vectors)
            .map(|(e, v)| (e, cosine(&q, v)))
            .collect();
        scored.sort_by(|a, b| rank_order((&a.0.qualified_name, a.1), (&b.0.qualified_name, b.1)));
        Ok(scored)
    }
}

pub fn retrieve_schema(
    index: &SchemaIndex,
    embedder: &Embedder,
    query_text: &str,
    k: usize,
) -> Result<Vec<SchemaElement>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::Config("k must be at least 1".into()));
    }
    Ok(index
        .ranked(embedder, query_text)?
        .into_iter()
        .take(k)
        .map(|(e, _)| e.clone())
        .collect())
}

/// Similarity index over a pool of training pairs.
#[derive(Debug, Clone)]
pub struct IclIndex {
    examples: Vec<IclExample>,
    model: Option<VectorModel>,
    vectors: Vec<Vector>,
}

impl IclIndex {
    pub fn build(pool: Vec<IclExample>, embedder: &Embedder) -> Result<Self, RetrievalError> {
        if pool.is_empty() {
            return Ok(Self {
                examples: pool,
                model: None,
                vectors: Vec::new(),
            });
        }
        let docs: Vec<String> = pool.iter().map(|e| e.question.clone()).collect();
        let (model, vectors) = embedder.fit(&docs)?;
        Ok(Self {
            examples: pool,
            model: Some(model),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Up to `m` examples by descending similarity, excluding any whose
    /// question equals `query_text` exactly. Ties keep pool order.
    pub fn retrieve(&self, embedder: &Embedder, query_text: &str, m: usize) -> Result<Vec<IclExample>, RetrievalError> {
        let Some(model) = &self.model else {
            return Ok(Vec::new());
        };
        let q = embedder.embed_query(model, query_text)?;
        let mut scored: Vec<(usize, f64)> = self
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.question != query_text)
            .map(|(i, _)| (i, cosine(&q, &self.vectors[i])))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(m)
            .map(|(i, _)| self.examples[i].clone())
            .collect())
    }
}

pub fn retrieve_icl(
    pool: &[IclExample],
    embedder: &Embedder,
    query_text: &str,
    m: usize,
) -> Result<Vec<IclExample>, RetrievalError> {
    IclIndex::build(pool.to_vec(), embedder)?.retrieve(embedder, query_text, m)
}

/// Renders retrieved elements for inclusion in a prompt.
pub fn render_schema_block(elements: &[SchemaElement]) -> String {
    elements
        .iter()
        .map(|e| format!("- {}", e.descriptor_text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// On-disk cache of schema indexes keyed by database, backend, and schema
/// content hash. A schema change produces a new key and evicts old entries.
#[derive(Debug, Clone)]
pub struct IndexCache {
    dir: PathBuf,
}

impl IndexCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn prefix(db_id: &str, backend: EmbedderBackend) -> String {
        format!("{db_id}.{backend}.")
    }

    pub fn key(schema: &DatabaseSchema, backend: EmbedderBackend) -> String {
        let bytes = serde_json::to_vec(schema).expect("schema serializes");
        let digest = hex::encode(Sha256::digest(&bytes));
        format!("{}{}.json", Self::prefix(&schema.db_id, backend), &digest[..16])
    }

    pub fn load_or_build(&self, schema: &DatabaseSchema, embedder: &Embedder) -> Result<SchemaIndex, RetrievalError> {
        let cache_err = |path: &Path, e: &dyn fmt::Display| RetrievalError::Cache {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let path = self.dir.join(Self::key(schema, embedder.backend()));
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(index) = serde_json::from_slice::<SchemaIndex>(&bytes) {
                return Ok(index);
            }
        }
        let index = index_schema(schema, embedder)?;
        fs::create_dir_all(&self.dir).map_err(|e| cache_err(&self.dir, &e))?;
        let prefix = Self::prefix(&schema.db_id, embedder.backend());
        if let Ok(entries) = fs::read_dir(&self.dir) {
            for entry in entries.flatten() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.starts_with(&prefix) {
                    let _ = fs::remove_file(entry.path());
                }
            }
        }
        let bytes = serde_json::to_vec(&index).map_err(|e| cache_err(&path, &e))?;
        fs::write(&path, bytes).map_err(|e| cache_err(&path, &e))?;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnDef, TableDef};

    fn col(name: &str) -> ColumnDef {
        ColumnDef {
            name: name.into(),
            declared_type: "TEXT".into(),
            sample_values: vec![],
        }
    }

    fn schema() -> DatabaseSchema {
        DatabaseSchema {
            db_id: "concerts".into(),
            tables: vec![
                TableDef {
                    name: "singer".into(),
                    columns: vec![col("singer_id"), col("name"), col("age")],
                    primary_key: vec!["singer_id".into()],
                    foreign_keys: vec![],
                },
                TableDef {
                    name: "stadium".into(),
                    columns: vec![col("stadium_id"), col("capacity")],
                    primary_key: vec![],
                    foreign_keys: vec![],
                },
            ],
        }
    }

    struct FixedDim(usize, usize);

    impl DenseEmbedder for FixedDim {
        fn dimension(&self) -> usize {
            self.0
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
            Ok(texts.iter().map(|_| vec![1.0; self.1]).collect())
        }
    }

    #[test]
    fn indexes_every_table_and_column_once() {
        let idx = index_schema(&schema(), &Embedder::LexicalFallback).unwrap();
        assert_eq!(idx.len(), 7);
        let again = index_schema(&schema(), &Embedder::LexicalFallback).unwrap();
        assert_eq!(serde_json::to_string(&idx).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn dense_dimension_mismatch_is_backend_error() {
        let bad = Embedder::Api(Arc::new(FixedDim(4, 3)));
        assert!(matches!(index_schema(&schema(), &bad), Err(RetrievalError::Backend(_))));
        let zero = Embedder::Api(Arc::new(FixedDim(0, 0)));
        assert!(matches!(index_schema(&schema(), &zero), Err(RetrievalError::Backend(_))));
        let good = Embedder::Api(Arc::new(FixedDim(3, 3)));
        let idx = index_schema(&schema(), &good).unwrap();
        assert!(retrieve_schema(&idx, &Embedder::LexicalFallback, "x", 1).is_err());
    }

    #[test]
    fn saturates_and_breaks_ties_by_name() {
        let idx = index_schema(&schema(), &Embedder::LexicalFallback).unwrap();
        let all = retrieve_schema(&idx, &Embedder::LexicalFallback, "how many singers", 50).unwrap();
        assert_eq!(all.len(), 7);
        assert!(all[0].qualified_name.contains("singer"));
        // Nothing matches: every score is zero, so order is purely by name.
        let none = retrieve_schema(&idx, &Embedder::LexicalFallback, "", 7).unwrap();
        let names: Vec<_> = none.iter().map(|e| e.qualified_name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert!(retrieve_schema(&idx, &Embedder::LexicalFallback, "x", 0).is_err());
    }

    #[test]
    fn icl_excludes_the_query_itself() {
        let pool = vec![
            IclExample {
                question: "How many singers are there?".into(),
                gold_sql: "SELECT COUNT(*) FROM singer".into(),
                language: Language::En,
            },
            IclExample {
                question: "What is the capacity of each stadium?".into(),
                gold_sql: "SELECT capacity FROM stadium".into(),
                language: Language::En,
            },
        ];
        let got = retrieve_icl(&pool, &Embedder::LexicalFallback, "How many singers are there?", 3).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].gold_sql, "SELECT capacity FROM stadium");
        assert!(retrieve_icl(&[], &Embedder::LexicalFallback, "q", 3).unwrap().is_empty());
    }

    #[test]
    fn config_rejects_zero() {
        assert!(RetrievalConfig { schema_top_k: 5, icl_top_m: 0 }.validate().is_err());
        assert!(RetrievalConfig { schema_top_k: 0, icl_top_m: 3 }.validate().is_err());
        assert!(RetrievalConfig::default().validate().is_ok());
    }

    #[test]
    fn cache_invalidates_on_schema_change() {
        let dir = tempfile::tempdir().unwrap();
        let cache = IndexCache::new(dir.path());
        let s = schema();
        let a = cache.load_or_build(&s, &Embedder::LexicalFallback).unwrap();
        let b = cache.load_or_build(&s, &Embedder::LexicalFallback).unwrap();
        assert_eq!(a, b);
        let mut changed = s.clone();
        changed.tables[1].columns.push(col("location"));
        let c = cache.load_or_build(&changed, &Embedder::LexicalFallback).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
