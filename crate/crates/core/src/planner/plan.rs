//! Line-oriented plan grammar.
//!
//! ```text
//! Counterfactual Condition: <assumption as a filter>
//! Action After Condition: <task with any extra filters>
//! Step 1: ...
//! Step 2: ...
//! Entity Variants:
//! - "NYC" -> ["NYC", "New York City"]
//! ```
//!
//! Every section is optional and the parser never fails: text without any
//! `Step` line becomes a single step holding the raw text.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub condition: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub raw_text: String,
    pub steps: Vec<String>,
    /// Entity surface form -> accepted variants (always including itself).
    pub entity_variants: BTreeMap<String, Vec<String>>,
    pub counterfactual: Option<Counterfactual>,
    pub plan_index: usize,
}

impl Plan {
    /// True when no `Step` line was found and the plan degraded to raw text.
    pub fn is_degraded(&self) -> bool {
        self.steps.len() == 1 && self.steps[0] == self.raw_text
    }
}

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^step\s*(\d+)\s*[:.)\-]\s*(.*)$").unwrap())
}

fn condition_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^counterfactual\s+condition\s*:\s*(.*)$").unwrap())
}

fn action_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^action\s+after\s+condition\s*:\s*(.*)$").unwrap())
}

fn variants_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^entity\s+variants\s*:\s*$").unwrap())
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    for b in ["•", "-", "*", "·"] {
        if let Some(rest) = t.strip_prefix(b) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    t
}

/// Parses `- "X" -> ["a", "b"]`.
fn parse_variant_line(line: &str) -> Option<(String, Vec<String>)> {
    let rest = line.trim().strip_prefix('-').or_else(|| line.trim().strip_prefix('•'))?.trim_start();
    let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<String>();
    let entity = stream.next()?.ok()?;
    let after = rest[stream.byte_offset()..].trim_start();
    let after = after
        .strip_prefix("->")
        .or_else(|| after.strip_prefix('→'))
        .or_else(|| after.strip_prefix(':'))?
        .trim_start();
    let mut stream = serde_json::Deserializer::from_str(after).into_iter::<Vec<String>>();
    let variants = stream.next()?.ok()?;
    Some((entity, variants))
}

fn add_variants(map: &mut BTreeMap<String, Vec<String>>, entity: String, variants: Vec<String>) {
    let list = map.entry(entity.clone()).or_default();
    if !list.contains(&entity) {
        list.insert(0, entity);
    }
    for v in variants {
        if !list.contains(&v) {
            list.push(v);
        }
    }
}

pub fn parse_plan(raw: &str) -> Plan {
    let mut steps = Vec::new();
    let mut entity_variants = BTreeMap::new();
    let mut condition = None;
    let mut action = None;
    let mut in_variants = false;

    for line in raw.lines() {
        if in_variants {
            if let Some((entity, variants)) = parse_variant_line(line) {
                add_variants(&mut entity_variants, entity, variants);
                continue;
            }
            let t = line.trim();
            if t.is_empty() || t.starts_with('-') || t.starts_with('•') {
                continue;
            }
            in_variants = false;
        }
        let body = strip_bullet(line);
        if let Some(c) = step_re().captures(body) {
            steps.push(c[2].trim().to_string());
        } else if let Some(c) = condition_re().captures(body) {
            condition.get_or_insert_with(|| c[1].trim().to_string());
        } else if let Some(c) = action_re().captures(body) {
            action.get_or_insert_with(|| c[1].trim().to_string());
        } else if variants_header_re().is_match(body) {
            in_variants = true;
        }
    }

    if steps.is_empty() {
        steps.push(raw.to_string());
    }
    let counterfactual = match (condition, action) {
        (Some(condition), Some(action)) => Some(Counterfactual { condition, action }),
        _ => None,
    };
    Plan {
        raw_text: raw.to_string(),
        steps,
        entity_variants,
        counterfactual,
        plan_index: 0,
    }
}

pub fn render_variant_line(entity: &str, variants: &[String]) -> String {
    format!(
        "- {} -> {}",
        serde_json::to_string(entity).expect("string serializes"),
        serde_json::to_string(variants).expect("strings serialize")
    )
}

/// Renders a plan back into the grammar `parse_plan` reads.
pub fn render_plan(plan: &Plan) -> String {
    let mut lines = Vec::new();
    if let Some(cf) = &plan.counterfactual {
        lines.push(format!("Counterfactual Condition: {}", cf.condition));
        lines.push(format!("Action After Condition: {}", cf.action));
    }
    lines.extend(
        plan.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Step {}: {s}", i + 1)),
    );
    if !plan.entity_variants.is_empty() {
        lines.push("Entity Variants:".into());
        lines.extend(
            plan.entity_variants
                .iter()
                .map(|(e, v)| render_variant_line(e, v)),
        );
    }
    lines.join("\n")
}
