//! The planning agent: prompt assembly, diverse plan sampling, plan parsing.

mod plan;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Language, NlQuery};
use crate::gateway::{ChatClient, ChatRequest, GatewayError, Purpose};
use crate::metaprompt::Guideline;
use crate::prompts::PromptSet;
use crate::retrieval::{render_schema_block, SchemaElement};

pub use plan::{parse_plan, render_plan, render_variant_line, Counterfactual, Plan};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("planner prompt: duplicate guideline id `{0}`")]
    DuplicateGuideline(String),
    #[error("planner prompt: base instructions are empty")]
    EmptyBase,
    #[error("planner config: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] crate::template::TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZhMode {
    /// Plan directly from the original question.
    #[default]
    Direct,
    /// Translate to English first, then plan from the translation.
    Translate,
}

impl std::str::FromStr for ZhMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(ZhMode::Direct),
            "translate" => Ok(ZhMode::Translate),
            other => Err(format!("unknown zh mode `{other}` (expected direct or translate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_num_plans")]
    pub num_plans: usize,
    #[serde(default)]
    pub zh_mode: ZhMode,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_num_plans() -> usize {
    3
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            num_plans: default_num_plans(),
            zh_mode: ZhMode::Direct,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.num_plans == 0 {
            return Err(PlannerError::Config("num_plans must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PlannerError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

/// Inputs of the planner system prompt. Guidelines are held sorted by
/// (category, id), so assembly order never depends on input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerPrompt {
    pub base_instructions: String,
    pub guidelines: Vec<Guideline>,
    pub entity_linking_block: String,
    pub schema_block: String,
}

pub const NO_GUIDELINES: &str = "(none)";

impl PlannerPrompt {
    pub fn render_guidelines(&self) -> String {
        if self.guidelines.is_empty() {
            return NO_GUIDELINES.to_string();
        }
        self.guidelines
            .iter()
            .map(Guideline::render)
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn render(&self, prompts: &PromptSet) -> Result<String, PlannerError> {
        let guidelines = self.render_guidelines();
        let values = BTreeMap::from([
            ("base", self.base_instructions.as_str()),
            ("entity_linking", self.entity_linking_block.as_str()),
            ("guidelines", guidelines.as_str()),
            ("schema", self.schema_block.as_str()),
        ]);
        Ok(prompts.planner_system.render(&values)?)
    }
}

/// Builds the planner prompt. `entity_linking` is the standing block asking
/// for entity surface-form variants.
pub fn assemble_planner_prompt(
    base: &str,
    entity_linking: &str,
    guidelines: &[Guideline],
    schema: &[SchemaElement],
) -> Result<PlannerPrompt, PlannerError> {
    if base.trim().is_empty() {
        return Err(PlannerError::EmptyBase);
    }
    let mut seen = HashSet::new();
    for g in guidelines {
        if !seen.insert(g.id.as_str()) {
            return Err(PlannerError::DuplicateGuideline(g.id.clone()));
        }
    }
    let mut guidelines = guidelines.to_vec();
    guidelines.sort_by(|a, b| (a.category, &a.id).cmp(&(b.category, &b.id)));
    Ok(PlannerPrompt {
        base_instructions: base.to_string(),
        guidelines,
        entity_linking_block: entity_linking.to_string(),
        schema_block: render_schema_block(schema),
    })
}

/// Samples plans for one query.
pub struct Planner<'a> {
    pub prompts: &'a PromptSet,
    pub config: PlannerConfig,
    pub model_name: &'a str,
}

impl Planner<'_> {
    /// English rendering of a zh question, obtained from the gateway.
    pub fn translate(&self, query: &NlQuery, client: &dyn ChatClient) -> Result<String, PlannerError> {
        let system = self.prompts.translate_system.render(&BTreeMap::new())?;
        let user = self
            .prompts
            .translate_user
            .render(&BTreeMap::from([("question", query.text.as_str())]))?;
        let resp = client.complete(&ChatRequest {
            purpose: Purpose::Translate,
            system_prompt: system,
            user_message: user,
            temperature: 0.0,
            seed_hint: None,
            model_name: self.model_name.to_string(),
        })?;
        Ok(resp.text.trim().to_string())
    }

    /// Exactly `num_plans` plans, generated in order. A completion that does
    /// not follow the plan grammar still yields a (degraded) plan.
    pub fn generate_plans(
        &self,
        query: &NlQuery,
        prompt: &PlannerPrompt,
        client: &dyn ChatClient,
    ) -> Result<Vec<Plan>, PlannerError> {
        self.config.validate()?;
        let question = if query.language == Language::Zh && self.config.zh_mode == ZhMode::Translate {
            self.translate(query, client)?
        } else {
            query.text.clone()
        };
        let system = prompt.render(self.prompts)?;
        let user = self
            .prompts
            .planner_user
            .render(&BTreeMap::from([("question", question.as_str())]))?;
        let mut plans = Vec::with_capacity(self.config.num_plans);
        for plan_index in 0..self.config.num_plans {
            let resp = client.complete(&ChatRequest {
                purpose: Purpose::Plan { plan_index },
                system_prompt: system.clone(),
                user_message: user.clone(),
                temperature: self.config.temperature,
                seed_hint: Some(plan_index as u64),
                model_name: self.model_name.to_string(),
            })?;
            let mut plan = parse_plan(&resp.text);
            plan.plan_index = plan_index;
            plans.push(plan);
        }
        Ok(plans)
    }
}
