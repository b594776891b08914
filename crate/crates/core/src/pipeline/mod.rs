//! Orchestration: per-query retrieve, plan, write SQL, execute, vote, judge;
//! then aggregate and write the run directory.

mod config;
mod refine;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::dataset::{
    file_content_hash, introspect_schema, load_split, DatabaseCatalog, DatasetError, Language, NlQuery, SplitName,
};
use crate::evaluation::{aggregate, judge, EvalError, EvalReport, GoldCache, GoldResult, QueryVerdict, ReportMeta};
use crate::executor::{check_validity_at, execute, fingerprint, has_top_level_order_by, ExecStatus, ExecutionOutcome};
use crate::gateway::{ChatClient, GatewayError, LiveBackend, MockBackend, MockScript, Recorder, Transcript};
use crate::metaprompt::{
    load_transcript, merge_into_prompt, seed_library, transcript_path, Guideline, GuidelineLibrary, MetapromptError,
    TRANSCRIPT_DIR,
};
use crate::planner::{assemble_planner_prompt, Planner, PlannerPrompt};
use crate::prompts::{PromptError, PromptSet};
use crate::retrieval::{
    index_schema, retrieve_schema, Embedder, HttpEmbedder, IclExample, IclIndex, IndexCache, RetrievalError,
    SchemaIndex,
};
use crate::sql_agent::{assemble_sql_prompt, SqlAgent, SqlCandidate, SqlTask};
use crate::voting::{vote, VoteEntry, VoteRecord};

pub use config::{
    BackendChoice, EmbedderConfig, ExecutionConfig, GatewayConfig, PathsConfig, RefineConfig, RunConfig,
    CONFIG_SNAPSHOT,
};
pub use refine::{run_refine_iteration, RefineOptions, RefineStep, RefineSummary};

pub const PROMPTS_SNAPSHOT_DIR: &str = "prompts";
pub const GUIDELINES_SNAPSHOT_DIR: &str = "guidelines";
pub const PLANNER_PROMPT_SNAPSHOT: &str = "planner_prompt.txt";
/// Stands in for the per-query schema block in prompt snapshots.
pub const SCHEMA_PLACEHOLDER: &str = "(retrieved per query)";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metaprompt(#[from] MetapromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn build_client(config: &RunConfig) -> Result<Box<dyn ChatClient>, PipelineError> {
    match config.gateway.backend {
        BackendChoice::Mock => {
            let path = config
                .gateway
                .mock_script
                .as_ref()
                .ok_or_else(|| PipelineError::Config("mock backend needs gateway.mock_script".into()))?;
            Ok(Box::new(MockBackend::new(MockScript::load(path)?)?))
        }
        BackendChoice::Live => {
            let live = config
                .gateway
                .live
                .clone()
                .ok_or_else(|| PipelineError::Config("live backend needs a [gateway.live] section".into()))?;
            Ok(Box::new(LiveBackend::from_env(live)?))
        }
    }
}

pub fn build_embedder(config: &RunConfig) -> Result<Embedder, PipelineError> {
    let Some(e) = &config.embedder else {
        return Ok(Embedder::LexicalFallback);
    };
    let credential = std::env::var(&e.api_key_env)
        .ok()
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| PipelineError::Config(format!("environment variable {} is not set", e.api_key_env)))?;
    let transport = crate::gateway::UreqTransport::new(std::time::Duration::from_secs(120));
    let api = HttpEmbedder::new(&e.endpoint, &e.model, e.dimension, credential, Box::new(transport));
    Ok(Embedder::Api(Arc::new(api)))
}

pub fn load_prompts(config: &RunConfig) -> Result<PromptSet, PipelineError> {
    Ok(match &config.paths.prompts {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::default(),
    })
}

pub fn load_library(config: &RunConfig) -> Result<GuidelineLibrary, PipelineError> {
    Ok(match &config.paths.guidelines {
        Some(dir) if dir.is_dir() => GuidelineLibrary::load_dir(dir)?,
        _ => GuidelineLibrary::from_guidelines(seed_library())?,
    })
}

/// Refuses guidelines distilled from the split being scored.
pub fn check_loop_safety(guidelines: &[Guideline], split: &str) -> Result<(), PipelineError> {
    if let Some(g) = guidelines.iter().find(|g| g.source_split.as_deref() == Some(split)) {
        return Err(PipelineError::Config(format!(
            "guideline {} was distilled from split `{split}` and cannot be used to score it",
            g.id
        )));
    }
    Ok(())
}

/// The planner system prompt with the schema block left as a placeholder.
pub fn render_prompt_snapshot(prompts: &PromptSet, guidelines: &[Guideline]) -> Result<String, PipelineError> {
    let prompt = PlannerPrompt {
        base_instructions: prompts.planner_base.clone(),
        guidelines: guidelines.to_vec(),
        entity_linking_block: prompts.entity_linking.clone(),
        schema_block: SCHEMA_PLACEHOLDER.into(),
    };
    prompt.render(prompts).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Everything queries share; immutable during the run.
struct Context<'a> {
    config: RunConfig,
    prompts: PromptSet,
    guidelines: Vec<Guideline>,
    embedder: Embedder,
    indexes: BTreeMap<String, SchemaIndex>,
    db_paths: BTreeMap<String, PathBuf>,
    icl: BTreeMap<Language, IclIndex>,
    gold: BTreeMap<String, Arc<GoldResult>>,
    client: &'a dyn ChatClient,
}

pub struct QueryRun {
    pub verdict: QueryVerdict,
    pub vote: VoteRecord,
    pub transcript: Transcript,
}

pub struct RunOutcome {
    pub report: EvalReport,
    pub run_dir: PathBuf,
}

fn error_candidate(query_id: &str, message: String) -> SqlCandidate {
    SqlCandidate {
        sql: String::new(),
        plan_index: 0,
        query_id: query_id.to_string(),
        error: Some(message),
    }
}

/// Candidates are compared as sequences when any of them orders its result
/// at the top level, and as multisets otherwise. Only candidate SQL is
/// consulted, never the gold query.
pub fn vote_order_sensitive(candidates: &[SqlCandidate]) -> bool {
    candidates
        .iter()
        .any(|c| c.is_usable() && has_top_level_order_by(&c.sql))
}

fn vote_entry(candidate: SqlCandidate, order_sensitive: bool, db_path: &Path, timeout_ms: u64) -> VoteEntry {
    let plan_index = candidate.plan_index;
    if !candidate.is_usable() {
        let msg = candidate.error.clone().unwrap_or_else(|| "empty SQL".into());
        return VoteEntry {
            plan_index,
            candidate,
            valid: false,
            outcome: ExecutionOutcome::failure(ExecStatus::SyntaxError, msg, 0),
            fingerprint: None,
        };
    }
    let valid = check_validity_at(&candidate.sql, db_path).valid;
    let outcome = execute(&candidate.sql, db_path, timeout_ms);
    let fingerprint = outcome
        .is_ok()
        .then(|| fingerprint(&outcome, order_sensitive).expect("ok outcome"));
    VoteEntry {
        plan_index,
        candidate,
        valid,
        outcome,
        fingerprint,
    }
}

impl Context<'_> {
    fn candidates(&self, query: &NlQuery, client: &dyn ChatClient) -> Vec<SqlCandidate> {
        let cfg = &self.config;
        let schema = match retrieve_schema(&self.indexes[&query.db_id], &self.embedder, &query.text, cfg.retrieval.schema_top_k)
        {
            Ok(s) => s,
            Err(e) => return vec![error_candidate(&query.id, e.to_string())],
        };
        let icl: Vec<IclExample> = if cfg.ablation.no_icl || !cfg.sql_agent.icl_enabled {
            Vec::new()
        } else {
            match self.icl.get(&query.language) {
                Some(index) => match index.retrieve(&self.embedder, &query.text, cfg.retrieval.icl_top_m) {
                    Ok(v) => v,
                    Err(e) => return vec![error_candidate(&query.id, e.to_string())],
                },
                None => Vec::new(),
            }
        };
        let agent = SqlAgent {
            prompts: &self.prompts,
            config: cfg.sql_agent,
            model_name: &cfg.model_name,
        };
        if cfg.ablation.no_planner {
            return match assemble_sql_prompt(&self.prompts, SqlTask::Question(&query.text), &schema, &icl) {
                Ok(p) => vec![agent.generate_sql(&p, 0, &query.id, client)],
                Err(e) => vec![error_candidate(&query.id, e.to_string())],
            };
        }
        let planner = Planner {
            prompts: &self.prompts,
            config: cfg.planner,
            model_name: &cfg.model_name,
        };
        let plans = assemble_planner_prompt(&self.prompts.planner_base, &self.prompts.entity_linking, &self.guidelines, &schema)
            .and_then(|prompt| planner.generate_plans(query, &prompt, client));
        let plans = match plans {
            Ok(p) => p,
            Err(e) => return vec![error_candidate(&query.id, e.to_string())],
        };
        plans
            .iter()
            .map(|plan| match assemble_sql_prompt(&self.prompts, SqlTask::Plan(plan), &schema, &icl) {
                Ok(p) => agent.generate_sql(&p, plan.plan_index, &query.id, client),
                Err(e) => SqlCandidate {
                    plan_index: plan.plan_index,
                    ..error_candidate(&query.id, e.to_string())
                },
            })
            .collect()
    }

    fn run_query(&self, query: &NlQuery) -> QueryRun {
        let recorder = Recorder::new(self.client);
        let candidates = self.candidates(query, &recorder);
        let transcript = recorder.into_transcript(&query.id);
        let db_path = &self.db_paths[&query.db_id];
        let timeout = self.config.execution.timeout_ms;
        let order_sensitive = vote_order_sensitive(&candidates);
        let entries: Vec<VoteEntry> = candidates
            .into_iter()
            .map(|c| vote_entry(c, order_sensitive, db_path, timeout))
            .collect();
        let record = vote(&query.id, entries).expect("at least one well-formed candidate");
        let winner = record.winner();
        let verdict = judge(
            query,
            &winner.candidate,
            record.decision,
            Some(&winner.outcome),
            &self.gold[&query.id],
            db_path,
            timeout,
        );
        QueryRun {
            verdict,
            vote: record,
            transcript,
        }
    }
}

fn load_queries(config: &RunConfig, catalog: &DatabaseCatalog) -> Result<Vec<NlQuery>, PipelineError> {
    let name = config.split_name()?;
    let split = load_split(&config.split_path(&config.split), name, catalog.ids())?;
    if split.queries.is_empty() {
        return Err(PipelineError::Config(format!("split `{}` has no queries", config.split)));
    }
    if let Some(q) = split.queries.iter().find(|q| q.gold_sql.is_none()) {
        return Err(EvalError::MissingGold(q.id.clone()).into());
    }
    Ok(split.queries)
}

fn icl_indexes(config: &RunConfig, catalog: &DatabaseCatalog, embedder: &Embedder) -> Result<BTreeMap<Language, IclIndex>, PipelineError> {
    let mut out = BTreeMap::new();
    if config.ablation.no_icl || !config.sql_agent.icl_enabled || config.icl_split == config.split {
        return Ok(out);
    }
    let path = config.split_path(&config.icl_split);
    if !path.is_file() {
        return Ok(out);
    }
    let name: SplitName = config.icl_split.parse().map_err(PipelineError::Config)?;
    let pool = load_split(&path, name, catalog.ids())?;
    for lang in [Language::En, Language::Zh] {
        let examples: Vec<IclExample> = pool
            .queries
            .iter()
            .filter(|q| q.language == lang)
            .filter_map(|q| {
                q.gold_sql.as_ref().map(|sql| IclExample {
                    question: q.text.clone(),
                    gold_sql: sql.clone(),
                    language: lang,
                })
            })
            .collect();
        out.insert(lang, IclIndex::build(examples, embedder)?);
    }
    Ok(out)
}

/// Runs the configured split with the gateway named in the config.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let client = build_client(config)?;
    run_pipeline_with_client(config, client.as_ref())
}

pub fn run_pipeline_with_client(config: &RunConfig, client: &dyn ChatClient) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let config = config.effective();
    let prompts = load_prompts(&config)?;
    let library = load_library(&config)?;
    let merged = merge_into_prompt(&library.active(), &prompts.planner_base)?;
    let guidelines = if config.ablation.no_guidelines {
        Vec::new()
    } else {
        check_loop_safety(&merged.guidelines, &config.split)?;
        merged.guidelines
    };
    let embedder = build_embedder(&config)?;
    let catalog = DatabaseCatalog::discover(&config.paths.databases)?;
    let queries = load_queries(&config, &catalog)?;

    let mut indexes = BTreeMap::new();
    let mut db_paths = BTreeMap::new();
    let mut db_hashes = BTreeMap::new();
    let cache = config.paths.index_cache.as_ref().map(IndexCache::new);
    for db_id in queries.iter().map(|q| q.db_id.clone()).collect::<std::collections::BTreeSet<_>>() {
        let path = catalog.path_of(&db_id).expect("split loader checked database ids");
        let schema = introspect_schema(&path)?;
        let index = match &cache {
            Some(c) => c.load_or_build(&schema, &embedder)?,
            None => index_schema(&schema, &embedder)?,
        };
        db_hashes.insert(db_id.clone(), file_content_hash(&path)?);
        indexes.insert(db_id.clone(), index);
        db_paths.insert(db_id, path);
    }
    let icl = icl_indexes(&config, &catalog, &embedder)?;

    // Gold failures are dataset errors and stop the run before any query.
    let gold_cache = GoldCache::new();
    let mut gold = BTreeMap::new();
    for q in &queries {
        let sql = q.gold_sql.as_deref().expect("checked above");
        let g = gold_cache.get(&q.id, sql, &db_paths[&q.db_id], &db_hashes[&q.db_id], config.execution.timeout_ms)?;
        gold.insert(q.id.clone(), g);
    }

    let run_dir = config.out_dir.clone();
    prepare_run_dir(&run_dir, &config, &prompts, &guidelines)?;

    let ctx = Context {
        config,
        prompts,
        guidelines,
        embedder,
        indexes,
        db_paths,
        icl,
        gold,
        client,
    };
    let runs = run_all(&ctx, &queries);

    let transcripts = run_dir.join(TRANSCRIPT_DIR);
    let mut verdicts = Vec::with_capacity(runs.len());
    let mut votes = Vec::with_capacity(runs.len());
    for run in runs {
        let path = transcripts.join(format!("{}.json", run.transcript.query_id));
        let mut text = serde_json::to_string_pretty(&run.transcript).expect("transcript serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        verdicts.push(run.verdict);
        votes.push(run.vote);
    }
    let meta = ReportMeta {
        split: ctx.config.split.clone(),
        model_name: ctx.config.model_name.clone(),
        ablation_flags: ctx.config.ablation.names(),
        zh_mode: format!("{:?}", ctx.config.planner.zh_mode).to_lowercase(),
    };
    let report = aggregate(verdicts, votes, meta)?;
    report.write(&run_dir)?;
    Ok(RunOutcome { report, run_dir })
}

/// Bounded worker pool over queries; results come back in query order.
fn run_all(ctx: &Context<'_>, queries: &[NlQuery]) -> Vec<QueryRun> {
    let workers = ctx.config.parallelism().min(queries.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<QueryRun>>> = Mutex::new((0..queries.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= queries.len() {
                    break;
                }
                let run = ctx.run_query(&queries[i]);
                slots.lock().expect("result slots")[i] = Some(run);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every query ran"))
        .collect()
}

fn prepare_run_dir(run_dir: &Path, config: &RunConfig, prompts: &PromptSet, guidelines: &[Guideline]) -> Result<(), PipelineError> {
    let transcripts = run_dir.join(TRANSCRIPT_DIR);
    if transcripts.exists() {
        fs::remove_dir_all(&transcripts).map_err(io_err(&transcripts))?;
    }
    fs::create_dir_all(&transcripts).map_err(io_err(&transcripts))?;
    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, config.to_toml()).map_err(io_err(&snapshot))?;
    let prompt_dir = run_dir.join(PROMPTS_SNAPSHOT_DIR);
    prompts.write_dir(&prompt_dir).map_err(io_err(&prompt_dir))?;
    let gdir = run_dir.join(GUIDELINES_SNAPSHOT_DIR);
    if gdir.exists() {
        fs::remove_dir_all(&gdir).map_err(io_err(&gdir))?;
    }
    GuidelineLibrary::from_guidelines(guidelines.to_vec())?.save_dir(&gdir)?;
    let planner = run_dir.join(PLANNER_PROMPT_SNAPSHOT);
    fs::write(&planner, render_prompt_snapshot(prompts, guidelines)?).map_err(io_err(&planner))?;
    Ok(())
}

/// Re-judges the winners recorded in a run directory against freshly
/// executed gold results and rewrites the report.
pub fn rescore_run(run_dir: &Path) -> Result<EvalReport, PipelineError> {
    let config = RunConfig::load(&run_dir.join(CONFIG_SNAPSHOT))?;
    let old = EvalReport::load(run_dir)?;
    let catalog = DatabaseCatalog::discover(&config.paths.databases)?;
    let queries = load_queries(&config, &catalog)?;
    let by_id: BTreeMap<&str, &NlQuery> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let cache = GoldCache::new();
    let mut verdicts = Vec::new();
    for record in &old.votes {
        let query = by_id
            .get(record.query_id.as_str())
            .ok_or_else(|| PipelineError::Config(format!("query {} is not in split `{}`", record.query_id, config.split)))?;
        let path = catalog.path_of(&query.db_id).expect("split loader checked database ids");
        let hash = file_content_hash(&path)?;
        let gold = cache.get(&query.id, query.gold_sql.as_deref().unwrap_or_default(), &path, &hash, config.execution.timeout_ms)?;
        let winner = record.winner();
        let outcome = winner
            .candidate
            .is_usable()
            .then(|| execute(&winner.candidate.sql, &path, config.execution.timeout_ms));
        verdicts.push(judge(
            query,
            &winner.candidate,
            record.decision,
            outcome.as_ref(),
            &gold,
            &path,
            config.execution.timeout_ms,
        ));
    }
    let meta = ReportMeta {
        split: old.split.clone(),
        model_name: old.model_name.clone(),
        ablation_flags: old.ablation_flags.clone(),
        zh_mode: old.zh_mode.clone(),
    };
    let report = aggregate(verdicts, old.votes, meta)?;
    report.write(run_dir)?;
    Ok(report)
}

/// Human-readable trail of one query: verdict, candidates and exchanges.
pub fn inspect_query(run_dir: &Path, query_id: &str) -> Result<String, PipelineError> {
    let report = EvalReport::load(run_dir)?;
    let verdict = report
        .verdict(query_id)
        .ok_or_else(|| PipelineError::Config(format!("no query {query_id} in {}", run_dir.display())))?;
    let mut out = String::new();
    let _ = writeln!(out, "query {} [{}]", verdict.query_id, verdict.language.as_str());
    let _ = writeln!(out, "question: {}", verdict.question);
    let _ = writeln!(out, "gold: {}", verdict.gold_sql);
    let _ = writeln!(out, "final: {}", verdict.final_sql);
    let _ = writeln!(
        out,
        "valid={} executed={} match={} decision={}",
        verdict.valid,
        verdict.executed_ok,
        verdict.exec_match,
        serde_json::to_value(verdict.decision).expect("decision").as_str().unwrap_or_default()
    );
    if let Some(record) = report.vote(query_id) {
        let _ = writeln!(out, "\ncandidates (winner {}):", record.winner_index);
        for e in &record.entries {
            let status = serde_json::to_value(e.outcome.status).expect("status");
            let fp = e.fingerprint.as_ref().map_or("-", |f| &f.digest[..12]);
            let _ = writeln!(
                out,
                "  [{}] {} valid={} status={} result={}",
                e.plan_index,
                if e.candidate.sql.is_empty() { "(no SQL)" } else { &e.candidate.sql },
                e.valid,
                status.as_str().unwrap_or_default(),
                fp
            );
            if let Some(err) = e.candidate.error.as_ref().or(e.outcome.error_message.as_ref()) {
                let _ = writeln!(out, "      error: {err}");
            }
        }
    }
    if transcript_path(run_dir, query_id).is_file() {
        let t = load_transcript(run_dir, query_id)?;
        let _ = writeln!(out, "\nexchanges:");
        for e in &t.entries {
            let _ = writeln!(out, "--- {}", e.request.purpose);
            match (&e.response, &e.error) {
                (Some(r), _) => {
                    let _ = writeln!(out, "{}", r.text.trim_end());
                }
                (None, Some(err)) => {
                    let _ = writeln!(out, "error: {err}");
                }
                _ => {}
            }
        }
    }
    Ok(out)
}
