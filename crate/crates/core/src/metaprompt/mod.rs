//! Guideline refinement: harvest failures, cluster them, take human edits,
//! distill guidelines and merge them into the planner prompt.

mod cluster;
mod distill;
mod library;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalReport;
use crate::gateway::{GatewayError, Transcript};
use crate::retrieval::RetrievalError;
use crate::template::TemplateError;

pub use cluster::{case_document, cluster_failures, load_cluster_file, write_cluster_file, FailureCluster};
pub use distill::{distill_guidelines, parse_guideline_blocks, render_cases, DraftGuideline};
pub use library::{check_unique_ids, seed_library, Category, Guideline, GuidelineLibrary, Provenance, UpsertOutcome};

pub const TRANSCRIPT_DIR: &str = "transcripts";

#[derive(Debug, Error)]
pub enum MetapromptError {
    #[error("guideline library: {0}")]
    Library(String),
    #[error("duplicate guideline id `{0}`")]
    DuplicateId(String),
    #[error("{0}")]
    Io(String),
    #[error("{path}: invalid cluster file: {}", problems.join("; "))]
    Validation { path: String, problems: Vec<String> },
    #[error("distilling cluster {cluster_id}: {message}")]
    Distillation { cluster_id: String, message: String },
    #[error("collecting failure {query_id}: {message}")]
    Collection { query_id: String, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Invalid,
    WrongResult,
    ExecutionError,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Invalid => "invalid",
            FailureKind::WrongResult => "wrong_result",
            FailureKind::ExecutionError => "execution_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCase {
    pub query_id: String,
    pub question: String,
    pub plan_text: String,
    pub predicted_sql: String,
    pub gold_sql: String,
    pub predicted_result_digest: String,
    pub gold_result_digest: String,
    pub failure_kind: FailureKind,
}

pub fn transcript_path(run_dir: &Path, query_id: &str) -> std::path::PathBuf {
    run_dir.join(TRANSCRIPT_DIR).join(format!("{query_id}.json"))
}

pub fn load_transcript(run_dir: &Path, query_id: &str) -> Result<Transcript, MetapromptError> {
    let path = transcript_path(run_dir, query_id);
    let err = |message: String| MetapromptError::Collection {
        query_id: query_id.to_string(),
        message,
    };
    let text = fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))
}

/// One case per non-matching verdict, in report order. The plan text is the
/// winning candidate's plan as recorded in the query transcript (empty when
/// the run had no planner).
pub fn collect_failures(report: &EvalReport, run_dir: &Path) -> Result<Vec<FailureCase>, MetapromptError> {
    let mut cases = Vec::new();
    for v in report.verdicts.iter().filter(|v| !v.exec_match) {
        let transcript = load_transcript(run_dir, &v.query_id)?;
        let winner = report.vote(&v.query_id).map_or(0, |r| r.winner_index);
        let plan_text = transcript.plan_text(winner).unwrap_or_default().to_string();
        let failure_kind = if !v.valid {
            FailureKind::Invalid
        } else if !v.executed_ok {
            FailureKind::ExecutionError
        } else {
            FailureKind::WrongResult
        };
        cases.push(FailureCase {
            query_id: v.query_id.clone(),
            question: v.question.clone(),
            plan_text,
            predicted_sql: v.final_sql.clone(),
            gold_sql: v.gold_sql.clone(),
            predicted_result_digest: v.predicted_digest.clone().unwrap_or_default(),
            gold_result_digest: v.gold_digest.clone(),
            failure_kind,
        });
    }
    Ok(cases)
}

/// What the planner prompt is assembled from after a merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedPrompt {
    pub base_instructions: String,
    pub guidelines: Vec<Guideline>,
}

/// Active guidelines ordered by (category, id), with exact-duplicate bodies
/// collapsed onto the first id in that order.
pub fn merge_into_prompt(library: &[Guideline], base: &str) -> Result<MergedPrompt, MetapromptError> {
    check_unique_ids(library)?;
    let mut active: Vec<Guideline> = library.iter().filter(|g| !g.tombstone).cloned().collect();
    active.sort_by(|a, b| (a.category, &a.id).cmp(&(b.category, &b.id)));
    let mut bodies = HashSet::new();
    active.retain(|g| bodies.insert(g.body.clone()));
    Ok(MergedPrompt {
        base_instructions: base.to_string(),
        guidelines: active,
    })
}
