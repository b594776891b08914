//! Guideline distillation from one failure cluster.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Category, FailureCase, FailureCluster, Guideline, MetapromptError, Provenance};
use crate::gateway::{ChatClient, ChatRequest, Purpose};
use crate::prompts::PromptSet;

/// A parsed guideline block before ids and provenance are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftGuideline {
    pub category: Category,
    pub trigger: String,
    pub body: String,
}

pub fn render_cases(cluster: &FailureCluster, cases: &[FailureCase]) -> String {
    let mut out = String::new();
    for id in &cluster.member_ids {
        let Some(c) = cases.iter().find(|c| &c.query_id == id) else {
            continue;
        };
        let _ = writeln!(out, "### Case {} ({})", c.query_id, c.failure_kind.as_str());
        let _ = writeln!(out, "Question: {}", c.question);
        let _ = writeln!(out, "Plan:\n{}", c.plan_text.trim());
        let _ = writeln!(out, "Predicted SQL: {}", c.predicted_sql.trim());
        let _ = writeln!(out, "Gold SQL: {}\n", c.gold_sql.trim());
    }
    out.trim_end().to_string()
}

/// Parses `### GUIDELINE` ... `### END` blocks. Text outside blocks is
/// ignored; a malformed block is an error.
pub fn parse_guideline_blocks(text: &str) -> Result<Vec<DraftGuideline>, String> {
    let mut drafts = Vec::new();
    let mut lines = text.lines().map(str::trim_end);
    while let Some(line) = lines.next() {
        if line.trim() != "### GUIDELINE" {
            continue;
        }
        let mut category = None;
        let mut trigger = None;
        let mut body: Option<Vec<&str>> = None;
        let mut closed = false;
        for l in lines.by_ref() {
            let t = l.trim();
            if t == "### END" {
                closed = true;
                break;
            }
            if let Some(b) = body.as_mut() {
                b.push(l);
            } else if let Some(v) = t.strip_prefix("Category:") {
                category = Some(Category::parse(v).ok_or_else(|| format!("unknown category `{}`", v.trim()))?);
            } else if let Some(v) = t.strip_prefix("Trigger:") {
                trigger = Some(v.trim().to_string());
            } else if let Some(v) = t.strip_prefix("Body:") {
                body = Some(if v.trim().is_empty() { vec![] } else { vec![v.trim()] });
            } else if !t.is_empty() {
                return Err(format!("unexpected line `{t}`"));
            }
        }
        if !closed {
            return Err("guideline block without ### END".into());
        }
        let category = category.ok_or("guideline block without Category")?;
        let trigger = trigger.filter(|t| !t.is_empty()).ok_or("guideline block without Trigger")?;
        let body = body.map(|b| b.join("\n").trim().to_string()).unwrap_or_default();
        if body.is_empty() {
            return Err("guideline block without Body".into());
        }
        drafts.push(DraftGuideline { category, trigger, body });
    }
    if drafts.is_empty() {
        return Err("no guideline blocks found".into());
    }
    Ok(drafts)
}

/// Asks the model for guidelines covering one cluster. Ids are
/// `D-<cluster>-<n>`, so re-distilling the same cluster edits in place.
pub fn distill_guidelines(
    cluster: &FailureCluster,
    cases: &[FailureCase],
    prompts: &PromptSet,
    client: &dyn ChatClient,
    model_name: &str,
    source_split: &str,
) -> Result<Vec<Guideline>, MetapromptError> {
    if cluster.member_ids.is_empty() {
        return Err(MetapromptError::Contract(format!("cluster {} is empty", cluster.cluster_id)));
    }
    let case_text = render_cases(cluster, cases);
    let label = if cluster.label.trim().is_empty() { "(unlabeled)" } else { cluster.label.trim() };
    let notes = if cluster.notes.trim().is_empty() { "(none)" } else { cluster.notes.trim() };
    let user = prompts.distill_user.render(&BTreeMap::from([
        ("cluster_id", cluster.cluster_id.as_str()),
        ("label", label),
        ("notes", notes),
        ("cases", case_text.as_str()),
    ]))?;
    let system = prompts.distill_system.render(&BTreeMap::new())?;
    let request = ChatRequest {
        purpose: Purpose::Distill {
            cluster_id: cluster.cluster_id.clone(),
        },
        system_prompt: system,
        user_message: user,
        temperature: 0.0,
        seed_hint: None,
        model_name: model_name.to_string(),
    };
    let response = client.complete(&request)?;
    let drafts = parse_guideline_blocks(&response.text).map_err(|message| MetapromptError::Distillation {
        cluster_id: cluster.cluster_id.clone(),
        message,
    })?;
    Ok(drafts
        .into_iter()
        .enumerate()
        .map(|(n, d)| Guideline {
            id: format!("D-{}-{}", cluster.cluster_id, n + 1),
            category: d.category,
            trigger: d.trigger,
            body: d.body,
            provenance: Provenance::Distilled,
            source_cluster: Some(cluster.cluster_id.clone()),
            source_split: Some(source_split.to_string()),
            tombstone: false,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript};
    use crate::metaprompt::FailureKind;

    const TWO: &str = "Here you go.\n### GUIDELINE\nCategory: arithmetic_aggregation\nTrigger: ratio questions\nBody:\nMultiply by 100.0.\nDivide by the full count.\n### END\n### GUIDELINE\nCategory: temporal\nTrigger: dates\nBody: Compare with date().\n### END\n";

    #[test]
    fn parses_blocks() {
        let d = parse_guideline_blocks(TWO).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].category, Category::ArithmeticAggregation);
        assert_eq!(d[0].body, "Multiply by 100.0.\nDivide by the full count.");
        assert_eq!(d[1].body, "Compare with date().");
    }

    #[test]
    fn rejects_malformed_output() {
        assert!(parse_guideline_blocks("just prose").is_err());
        assert!(parse_guideline_blocks("### GUIDELINE\nCategory: maths\nTrigger: x\nBody: y\n### END").is_err());
        assert!(parse_guideline_blocks("### GUIDELINE\nCategory: other\nTrigger: x\nBody: y\n").is_err());
        assert!(parse_guideline_blocks("### GUIDELINE\nCategory: other\nBody: y\n### END").is_err());
        assert!(parse_guideline_blocks("### GUIDELINE\nCategory: other\nTrigger: x\nBody:\n### END").is_err());
    }

    fn cluster() -> (FailureCluster, Vec<FailureCase>) {
        let case = FailureCase {
            query_id: "h1".into(),
            question: "What percentage of singers are French?".into(),
            plan_text: "Step 1: count".into(),
            predicted_sql: "SELECT 100 * 1 / 3".into(),
            gold_sql: "SELECT 100.0 * 1 / 3".into(),
            predicted_result_digest: "a".into(),
            gold_result_digest: "b".into(),
            failure_kind: FailureKind::WrongResult,
        };
        let cluster = FailureCluster {
            cluster_id: "C1".into(),
            label: "integer percentages".into(),
            member_ids: vec!["h1".into()],
            notes: String::new(),
        };
        (cluster, vec![case])
    }

    #[test]
    fn distills_with_ids_and_provenance() {
        let script = MockScript::from_toml_str(&format!(
            "[[rule]]\nuser_contains = \"integer percentages\"\nresponses = [{}]\n",
            toml::Value::String(TWO.into())
        ))
        .unwrap();
        let mock = MockBackend::new(script).unwrap();
        let (c, cases) = cluster();
        let gs = distill_guidelines(&c, &cases, &PromptSet::default(), &mock, "m", "heldout").unwrap();
        assert_eq!(gs.iter().map(|g| g.id.as_str()).collect::<Vec<_>>(), ["D-C1-1", "D-C1-2"]);
        assert!(gs.iter().all(|g| g.provenance == Provenance::Distilled && g.source_cluster.as_deref() == Some("C1")));
    }

    #[test]
    fn unparseable_completion_is_a_distillation_error() {
        let script = MockScript::from_toml_str("[[rule]]\nuser_contains = \"C1\"\nresponses = [\"no idea\"]\n").unwrap();
        let mock = MockBackend::new(script).unwrap();
        let (c, cases) = cluster();
        assert!(matches!(
            distill_guidelines(&c, &cases, &PromptSet::default(), &mock, "m", "heldout"),
            Err(MetapromptError::Distillation { .. })
        ));
    }
}
