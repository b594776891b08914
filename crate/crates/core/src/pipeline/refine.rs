//! One refinement iteration over a finished heldout run.
//!
//! The first call writes the cluster review file and stops; the next call
//! (after the file has been reviewed) distills, merges and snapshots.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{io_err, load_library, load_prompts, render_prompt_snapshot, PipelineError, RunConfig};
use crate::evaluation::EvalReport;
use crate::gateway::ChatClient;
use crate::metaprompt::{
    cluster_failures, collect_failures, distill_guidelines, load_cluster_file, merge_into_prompt, write_cluster_file,
    FailureCluster, UpsertOutcome,
};

#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub clusters_file: PathBuf,
    /// Stop after writing a fresh cluster file so a reviewer can edit it.
    pub pause: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineSummary {
    pub version: usize,
    pub snapshot: PathBuf,
    pub clusters: Vec<FailureCluster>,
    pub added: Vec<String>,
    pub edited: Vec<String>,
    pub unchanged: Vec<String>,
    #[serde(skip)]
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefineStep {
    /// Nothing failed; the library is untouched.
    NoFailures,
    AwaitingReview {
        clusters_file: PathBuf,
        clusters: Vec<FailureCluster>,
    },
    Completed(RefineSummary),
}

fn snapshot_dir(config: &RunConfig, guidelines_dir: &Path) -> PathBuf {
    config.paths.prompt_snapshots.clone().unwrap_or_else(|| {
        guidelines_dir
            .parent()
            .unwrap_or(Path::new("."))
            .join("prompt_snapshots")
    })
}

fn next_version(dir: &Path) -> usize {
    let existing = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .filter(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    name.starts_with("planner_v") && name.ends_with(".txt")
                })
                .count()
        })
        .unwrap_or(0);
    existing + 1
}

pub fn run_refine_iteration(
    config: &RunConfig,
    heldout_run: &Path,
    options: &RefineOptions,
    client: &dyn ChatClient,
) -> Result<RefineStep, PipelineError> {
    let guidelines_dir = config
        .paths
        .guidelines
        .clone()
        .ok_or_else(|| PipelineError::Config("refinement needs paths.guidelines".into()))?;
    let report = EvalReport::load(heldout_run)?;
    if report.split != "heldout" {
        return Err(PipelineError::Config(format!(
            "refinement harvests the heldout split, but {} was run on `{}`",
            heldout_run.display(),
            report.split
        )));
    }
    let cases = collect_failures(&report, heldout_run)?;
    if cases.is_empty() {
        return Ok(RefineStep::NoFailures);
    }

    let clusters = if options.clusters_file.is_file() {
        load_cluster_file(&options.clusters_file, &cases)?
    } else {
        let embedder = super::build_embedder(config)?;
        let clusters = cluster_failures(&cases, &embedder, config.refine.max_clusters)?;
        write_cluster_file(&options.clusters_file, &clusters, &cases)?;
        if options.pause {
            return Ok(RefineStep::AwaitingReview {
                clusters_file: options.clusters_file.clone(),
                clusters,
            });
        }
        clusters
    };

    let prompts = load_prompts(config)?;
    let mut library = load_library(config)?;
    let (mut added, mut edited, mut unchanged) = (Vec::new(), Vec::new(), Vec::new());
    for cluster in &clusters {
        for g in distill_guidelines(cluster, &cases, &prompts, client, &config.model_name, &report.split)? {
            let id = g.id.clone();
            match library.upsert(g)? {
                UpsertOutcome::Added => added.push(id),
                UpsertOutcome::Edited => edited.push(id),
                UpsertOutcome::Unchanged => unchanged.push(id),
            }
        }
    }
    library.save_dir(&guidelines_dir)?;

    let merged = merge_into_prompt(&library.active(), &prompts.planner_base)?;
    let prompt_text = render_prompt_snapshot(&prompts, &merged.guidelines)?;
    let dir = snapshot_dir(config, &guidelines_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let version = next_version(&dir);
    let snapshot = dir.join(format!("planner_v{version:03}.txt"));
    fs::write(&snapshot, &prompt_text).map_err(io_err(&snapshot))?;
    let summary = RefineSummary {
        version,
        snapshot,
        clusters,
        added,
        edited,
        unchanged,
        prompt_text,
    };
    let log = dir.join(format!("refine_v{version:03}.json"));
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    fs::write(&log, text).map_err(io_err(&log))?;
    Ok(RefineStep::Completed(summary))
}
