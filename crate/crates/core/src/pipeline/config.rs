//! Run configuration: a TOML file whose relative paths resolve against the
//! file's own directory.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataset::SplitName;
use crate::evaluation::AblationFlags;
use crate::executor::DEFAULT_TIMEOUT_MS;
use crate::gateway::LiveConfig;
use crate::planner::PlannerConfig;
use crate::retrieval::RetrievalConfig;
use crate::sql_agent::SqlAgentConfig;

pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Holds `<db_id>/<db_id>.sqlite`.
    pub databases: PathBuf,
    /// Holds `<split>.jsonl` files.
    pub data: PathBuf,
    /// Optional prompt overrides; built-ins fill the gaps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    /// Guideline library; the seed library is used when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidelines: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_cache: Option<PathBuf>,
    /// Versioned planner prompt snapshots written by refinement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_snapshots: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live: Option<LiveConfig>,
}

/// Remote embedding model; the lexical fallback is used when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub dimension: usize,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default = "default_max_clusters")]
    pub max_clusters: usize,
}

fn default_max_clusters() -> usize {
    4
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_clusters: default_max_clusters(),
        }
    }
}

fn default_split() -> String {
    "dev".into()
}

fn default_icl_split() -> String {
    "train".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model_name: String,
    #[serde(default = "default_split")]
    pub split: String,
    /// Split supplying in-context examples.
    #[serde(default = "default_icl_split")]
    pub icl_split: String,
    pub out_dir: PathBuf,
    /// Worker threads over queries; defaults to the available processors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    pub paths: PathsConfig,
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub sql_agent: SqlAgentConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderConfig>,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub execution: ExecutionConfig,
    #[serde(default)]
    pub refine: RefineConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        let mut out = PathBuf::new();
        for c in base.join(&*p).components() {
            match c {
                Component::CurDir => {}
                Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                    out.pop();
                }
                other => out.push(other),
            }
        }
        *p = out;
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = fs::canonicalize(parent).map_err(|e| PipelineError::Config(format!("{}: {e}", parent.display())))?;
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        resolve(base, &mut self.paths.databases);
        resolve(base, &mut self.paths.data);
        for p in [
            &mut self.paths.prompts,
            &mut self.paths.guidelines,
            &mut self.paths.index_cache,
            &mut self.paths.prompt_snapshots,
            &mut self.gateway.mock_script,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn split_name(&self) -> Result<SplitName, PipelineError> {
        SplitName::from_str(&self.split).map_err(PipelineError::Config)
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.paths.data.join(format!("{split}.jsonl"))
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// The configuration actually run: `single_plan` pins one plan.
    pub fn effective(&self) -> RunConfig {
        let mut c = self.clone();
        if c.ablation.single_plan {
            c.planner.num_plans = 1;
        }
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| Err(PipelineError::Config(m));
        if self.model_name.trim().is_empty() {
            return cfg("model_name is empty".into());
        }
        self.split_name()?;
        SplitName::from_str(&self.icl_split).map_err(PipelineError::Config)?;
        if self.parallelism == Some(0) {
            return cfg("parallelism must be at least 1".into());
        }
        if self.execution.timeout_ms == 0 {
            return cfg("execution.timeout_ms must be at least 1".into());
        }
        if self.refine.max_clusters == 0 {
            return cfg("refine.max_clusters must be at least 1".into());
        }
        self.planner.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.retrieval.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..=2.0).contains(&self.sql_agent.temperature) {
            return cfg(format!("sql_agent.temperature {} outside [0, 2]", self.sql_agent.temperature));
        }
        match self.gateway.backend {
            BackendChoice::Mock if self.gateway.mock_script.is_none() => {
                return cfg("mock backend needs gateway.mock_script".into())
            }
            BackendChoice::Live if self.gateway.live.is_none() => {
                return cfg("live backend needs a [gateway.live] section".into())
            }
            _ => {}
        }
        if let Some(e) = &self.embedder {
            if e.dimension == 0 {
                return cfg("embedder.dimension must be positive".into());
            }
        }
        for (what, path) in [("paths.databases", &self.paths.databases), ("paths.data", &self.paths.data)] {
            if !path.is_dir() {
                return cfg(format!("{what} {} is not a directory", path.display()));
            }
        }
        let split = self.split_path(&self.split);
        if !split.is_file() {
            return cfg(format!("split file {} not found", split.display()));
        }
        if let Some(script) = self.gateway.mock_script.as_ref().filter(|_| self.gateway.backend == BackendChoice::Mock) {
            if !script.is_file() {
                return cfg(format!("mock script {} not found", script.display()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
