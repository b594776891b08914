//! The SQL-writing agent: compiles one plan (or, with the planner ablated, the
//! raw question) into one SQL statement.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatClient, ChatRequest, Purpose};
use crate::planner::Plan;
use crate::prompts::PromptSet;
use crate::retrieval::{render_schema_block, IclExample, SchemaElement};
use crate::template::TemplateError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqlAgentConfig {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "yes")]
    pub icl_enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for SqlAgentConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            icl_enabled: true,
        }
    }
}

/// One compiled candidate. `error` is set when no usable SQL came back; the
/// candidate still occupies its plan slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlCandidate {
    pub sql: String,
    pub plan_index: usize,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SqlCandidate {
    pub fn is_usable(&self) -> bool {
        self.error.is_none() && !self.sql.trim().is_empty()
    }
}

/// What the SQL agent compiles.
#[derive(Debug, Clone, Copy)]
pub enum SqlTask<'a> {
    Plan(&'a Plan),
    /// Planner ablated: compile the question directly.
    Question(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlPrompt {
    pub system: String,
    pub user: String,
}

/// Plan steps as the SQL agent sees them: the counterfactual pair first,
/// then numbered steps, each reproduced verbatim.
pub fn render_plan_for_sql(plan: &Plan) -> String {
    let mut lines = Vec::new();
    if let Some(cf) = &plan.counterfactual {
        lines.push(format!("Counterfactual Condition: {}", cf.condition));
        lines.push(format!("Action After Condition: {}", cf.action));
    }
    for (i, s) in plan.steps.iter().enumerate() {
        lines.push(format!("Step {}: {s}", i + 1));
    }
    lines.join("\n")
}

/// Explicit matching instruction for every entity with variants; empty when
/// the plan has none.
pub fn render_entity_matches(plan: &Plan) -> String {
    if plan.entity_variants.is_empty() {
        return String::new();
    }
    let mut out = String::from(
        "\n## Entity variants\nWhen filtering on these entities, match any of the listed forms (for example with IN (...)):\n",
    );
    for (entity, forms) in &plan.entity_variants {
        let quoted = forms
            .iter()
            .map(|f| format!("'{}'", f.replace('\'', "''")))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("- {entity}: {quoted}\n"));
    }
    out
}

pub fn render_examples(icl: &[IclExample]) -> String {
    if icl.is_empty() {
        return String::new();
    }
    let mut out = String::from("\n## Examples\n");
    for ex in icl {
        out.push_str(&format!("\nQuestion: {}\nSQL: {}\n", ex.question, ex.gold_sql.trim()));
    }
    out
}

/// System prompt: instructions, schema, then examples (omitted when there are
/// none). User message: the plan, then entity variants; or the question.
pub fn assemble_sql_prompt(
    prompts: &PromptSet,
    task: SqlTask<'_>,
    schema: &[SchemaElement],
    icl: &[IclExample],
) -> Result<SqlPrompt, TemplateError> {
    let schema_block = render_schema_block(schema);
    let examples = render_examples(icl);
    let system = prompts.sql_system.render(&BTreeMap::from([
        ("schema", schema_block.as_str()),
        ("examples", examples.as_str()),
    ]))?;
    let user = match task {
        SqlTask::Plan(plan) => {
            let steps = render_plan_for_sql(plan);
            let variants = render_entity_matches(plan);
            prompts.sql_user_plan.render(&BTreeMap::from([
                ("plan", steps.as_str()),
                ("entity_variants", variants.as_str()),
            ]))?
        }
        SqlTask::Question(q) => prompts.sql_user_question.render(&BTreeMap::from([("question", q)]))?,
    };
    Ok(SqlPrompt { system, user })
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```(?:[A-Za-z0-9_+\-]*[ \t]*\n)?(.*?)(?:```|\z)").unwrap())
}

fn keyword_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?i)\b(?:SELECT\b|WITH\s+(?:RECURSIVE\s+)?[\w"`\[\]]+\s*(?:\([^()]*\)\s*)?AS\s*(?:(?:NOT\s+)?MATERIALIZED\s*)?\(|INSERT\s+(?:OR\s+\w+\s+)?INTO\b|REPLACE\s+INTO\b|UPDATE\s+[\w"`\[\]]+\s+SET\b|DELETE\s+FROM\b|VALUES\s*\()"#,
        )
        .unwrap()
    })
}

/// Extracts SQL from a completion: takes the first fenced block if any, then
/// drops leading prose before the first SQL keyword, then trims. Idempotent.
pub fn post_process(completion: &str) -> String {
    let body = if completion.contains("```") {
        fence_re()
            .captures(completion)
            .and_then(|c| c.get(1))
            .map_or(completion, |m| m.as_str())
    } else {
        completion
    };
    let start = keyword_re().find(body).map_or(0, |m| m.start());
    body[start..].trim().to_string()
}

pub struct SqlAgent<'a> {
    pub prompts: &'a PromptSet,
    pub config: SqlAgentConfig,
    pub model_name: &'a str,
}

impl SqlAgent<'_> {
    /// Never fails: gateway errors and empty output become an error marker on
    /// the candidate.
    pub fn generate_sql(
        &self,
        prompt: &SqlPrompt,
        plan_index: usize,
        query_id: &str,
        client: &dyn ChatClient,
    ) -> SqlCandidate {
        let request = ChatRequest {
            purpose: Purpose::Sql { plan_index },
            system_prompt: prompt.system.clone(),
            user_message: prompt.user.clone(),
            temperature: self.config.temperature,
            seed_hint: None,
            model_name: self.model_name.to_string(),
        };
        let (sql, error) = match client.complete(&request) {
            Ok(resp) => {
                let sql = post_process(&resp.text);
                if sql.is_empty() {
                    (sql, Some("empty SQL after post-processing".to_string()))
                } else {
                    (sql, None)
                }
            }
            Err(e) => (String::new(), Some(e.to_string())),
        };
        SqlCandidate {
            sql,
            plan_index,
            query_id: query_id.to_string(),
            error,
        }
    }
}
