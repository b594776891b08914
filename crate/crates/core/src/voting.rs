//! Majority vote over execution-result fingerprints.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecutionOutcome, ResultFingerprint};
use crate::sql_agent::SqlCandidate;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VoteError {
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Majority,
    TieBroken,
    FallbackValid,
    FallbackFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteEntry {
    pub plan_index: usize,
    pub candidate: SqlCandidate,
    /// Whether the candidate's SQL prepared successfully.
    pub valid: bool,
    pub outcome: ExecutionOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<ResultFingerprint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub query_id: String,
    pub entries: Vec<VoteEntry>,
    /// `plan_index` of the winning entry.
    pub winner_index: usize,
    pub decision: Decision,
}

impl VoteRecord {
    pub fn winner(&self) -> &VoteEntry {
        self.entries
            .iter()
            .find(|e| e.plan_index == self.winner_index)
            .expect("winner refers to an entry")
    }
}

pub fn vote(query_id: &str, entries: Vec<VoteEntry>) -> Result<VoteRecord, VoteError> {
    if entries.is_empty() {
        return Err(VoteError::Contract(format!("no candidates to vote on for {query_id}")));
    }
    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.plan_index) {
            return Err(VoteError::Contract(format!("duplicate plan_index {}", e.plan_index)));
        }
        if e.outcome.is_ok() != e.fingerprint.is_some() {
            return Err(VoteError::Contract(format!(
                "plan {}: fingerprint must be present exactly when the outcome is ok",
                e.plan_index
            )));
        }
    }

    // class -> (size, smallest plan_index)
    let mut classes: BTreeMap<&ResultFingerprint, (usize, usize)> = BTreeMap::new();
    for e in &entries {
        if let Some(fp) = &e.fingerprint {
            let c = classes.entry(fp).or_insert((0, usize::MAX));
            c.0 += 1;
            c.1 = c.1.min(e.plan_index);
        }
    }

    let (winner_index, decision) = if let Some(max) = classes.values().map(|c| c.0).max() {
        let tied: Vec<usize> = classes.values().filter(|c| c.0 == max).map(|c| c.1).collect();
        let winner = *tied.iter().min().expect("at least one class");
        let decision = if tied.len() > 1 { Decision::TieBroken } else { Decision::Majority };
        (winner, decision)
    } else if let Some(e) = entries.iter().filter(|e| e.valid).min_by_key(|e| e.plan_index) {
        (e.plan_index, Decision::FallbackValid)
    } else {
        let first = entries.iter().map(|e| e.plan_index).min().expect("non-empty");
        (first, Decision::FallbackFirst)
    };

    Ok(VoteRecord {
        query_id: query_id.to_string(),
        entries,
        winner_index,
        decision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ExecStatus, NormalizedValue};

    fn entry(plan_index: usize, fp: Option<&str>, valid: bool) -> VoteEntry {
        let outcome = match fp {
            Some(d) => ExecutionOutcome {
                status: ExecStatus::Ok,
                rows: Some(vec![vec![NormalizedValue::Text(d.into())]]),
                columns: 1,
                error_message: None,
                elapsed_ms: 0,
            },
            None => ExecutionOutcome {
                status: if valid { ExecStatus::RuntimeError } else { ExecStatus::SyntaxError },
                rows: None,
                columns: 0,
                error_message: Some("e".into()),
                elapsed_ms: 0,
            },
        };
        VoteEntry {
            plan_index,
            candidate: SqlCandidate {
                sql: format!("SELECT {plan_index}"),
                plan_index,
                query_id: "q".into(),
                error: None,
            },
            valid,
            outcome,
            fingerprint: fp.map(|d| ResultFingerprint { digest: d.into() }),
        }
    }

    #[test]
    fn unanimity() {
        let r = vote("q", vec![entry(0, Some("A"), true), entry(1, Some("A"), true), entry(2, Some("A"), true)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (0, Decision::Majority));
    }

    #[test]
    fn two_against_one() {
        let r = vote("q", vec![entry(0, Some("B"), true), entry(1, Some("A"), true), entry(2, Some("A"), true)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (1, Decision::Majority));
        assert_eq!(r.winner().fingerprint.as_ref().unwrap().digest, "A");
    }

    #[test]
    fn all_distinct_breaks_tie_on_smallest_index() {
        let r = vote("q", vec![entry(2, Some("C"), true), entry(0, Some("A"), true), entry(1, Some("B"), true)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (0, Decision::TieBroken));
    }

    #[test]
    fn fallback_chain() {
        let r = vote("q", vec![entry(0, None, false), entry(1, None, true), entry(2, None, false)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (1, Decision::FallbackValid));
        let r = vote("q", vec![entry(0, None, false), entry(1, None, false)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (0, Decision::FallbackFirst));
    }

    #[test]
    fn errors_do_not_vote() {
        let r = vote("q", vec![entry(0, None, true), entry(1, None, true), entry(2, Some("Z"), true)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (2, Decision::Majority));
    }

    #[test]
    fn single_candidate_identity() {
        let r = vote("q", vec![entry(0, Some("A"), true)]).unwrap();
        assert_eq!((r.winner_index, r.decision), (0, Decision::Majority));
    }

    #[test]
    fn contract_violations() {
        assert!(vote("q", vec![]).is_err());
        assert!(vote("q", vec![entry(0, Some("A"), true), entry(0, Some("A"), true)]).is_err());
        let mut bad = entry(0, Some("A"), true);
        bad.fingerprint = None;
        assert!(vote("q", vec![bad]).is_err());
    }
}
