#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plansql_core::executor::{ExecStatus, ExecutionOutcome, NormalizedValue, ResultFingerprint};
use plansql_core::fixture::{materialize, FixtureLayout};
use plansql_core::gateway::Transcript;
use plansql_core::metaprompt::TRANSCRIPT_DIR;
use plansql_core::pipeline::{run_pipeline, PipelineError, RunConfig, RunOutcome};
use plansql_core::sql_agent::SqlCandidate;
use plansql_core::voting::VoteEntry;
use tempfile::TempDir;

pub struct Fixture {
    _dir: TempDir,
    pub layout: FixtureLayout,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let layout = materialize(dir.path()).expect("fixture corpus");
        Self { _dir: dir, layout }
    }

    pub fn root(&self) -> &Path {
        &self.layout.root
    }

    /// Loads `config/<name>.toml` with the run directory moved to `runs/<out>`.
    pub fn config(&self, name: &str, out: &str) -> RunConfig {
        let mut cfg = RunConfig::load(&self.layout.config(name)).expect("fixture config");
        cfg.out_dir = self.root().join("runs").join(out);
        cfg
    }

    pub fn run_result(&self, cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
        run_pipeline(cfg)
    }

    pub fn run(&self, cfg: &RunConfig) -> RunOutcome {
        run_pipeline(cfg).unwrap_or_else(|e| panic!("run into {} failed: {e}", cfg.out_dir.display()))
    }
}

pub fn transcripts(run_dir: &Path) -> BTreeMap<String, Transcript> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(run_dir.join(TRANSCRIPT_DIR)).expect("transcript dir") {
        let path: PathBuf = entry.expect("dir entry").path();
        let t: Transcript = serde_json::from_str(&fs::read_to_string(&path).expect("transcript")).expect("transcript json");
        out.insert(t.query_id.clone(), t);
    }
    out
}

/// A vote entry whose result is one text cell; `None` means the candidate
/// failed, validly or not.
pub fn entry(plan_index: usize, class: Option<&str>, valid: bool) -> VoteEntry {
    let outcome = match class {
        Some(c) => ExecutionOutcome {
            status: ExecStatus::Ok,
            rows: Some(vec![vec![NormalizedValue::Text(c.to_string())]]),
            columns: 1,
            error_message: None,
            elapsed_ms: 0,
        },
        None => ExecutionOutcome::failure(
            if valid { ExecStatus::RuntimeError } else { ExecStatus::SyntaxError },
            "failed",
            0,
        ),
    };
    VoteEntry {
        plan_index,
        candidate: SqlCandidate {
            sql: format!("SELECT {plan_index}"),
            plan_index,
            query_id: "q".into(),
            error: None,
        },
        valid: valid || class.is_some(),
        outcome,
        fingerprint: class.map(|c| ResultFingerprint { digest: c.to_string() }),
    }
}
