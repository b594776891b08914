//! Failure clustering and the human-editable cluster file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FailureCase, MetapromptError};
use crate::retrieval::{cosine, Embedder};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureCluster {
    #[serde(rename = "id")]
    pub cluster_id: String,
    #[serde(default)]
    pub label: String,
    #[serde(rename = "members")]
    pub member_ids: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    #[serde(default)]
    cluster: Vec<FailureCluster>,
}

pub fn case_document(case: &FailureCase) -> String {
    format!("{}\n{}\n{}", case.question, case.gold_sql, case.predicted_sql)
}

/// Average-linkage agglomerative clustering until at most `max_clusters`
/// remain. Ties go to the lowest pair of cluster positions. Clusters come out
/// ordered by their first member and are numbered C1, C2, ...
pub fn cluster_failures(
    cases: &[FailureCase],
    embedder: &Embedder,
    max_clusters: usize,
) -> Result<Vec<FailureCluster>, MetapromptError> {
    if cases.is_empty() {
        return Err(MetapromptError::Contract("no failures to cluster".into()));
    }
    if max_clusters == 0 {
        return Err(MetapromptError::Contract("max_clusters must be positive".into()));
    }
    let docs: Vec<String> = cases.iter().map(case_document).collect();
    let (_, vectors) = embedder.fit(&docs)?;
    let n = cases.len();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| cosine(&vectors[i], &vectors[j])).collect())
        .collect();

    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while groups.len() > max_clusters {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let total: f64 = groups[a]
                    .iter()
                    .flat_map(|&i| groups[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| sim[i][j])
                    .sum();
                let avg = total / (groups[a].len() * groups[b].len()) as f64;
                if best.is_none_or(|(s, _, _)| avg > s) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two groups");
        let moved = groups.remove(b);
        groups[a].extend(moved);
        groups[a].sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(k, g)| FailureCluster {
            cluster_id: format!("C{}", k + 1),
            label: String::new(),
            member_ids: g.into_iter().map(|i| cases[i].query_id.clone()).collect(),
            notes: String::new(),
        })
        .collect())
}

/// Writes the review file. A comment header lists every failure so the
/// reviewer can regroup and relabel without other files.
pub fn write_cluster_file(path: &Path, clusters: &[FailureCluster], cases: &[FailureCase]) -> Result<(), MetapromptError> {
    let mut out = String::from(
        "# Failure clusters for review. Move members between clusters, edit labels and notes,\n\
         # add or empty clusters as needed. Every failure must appear in exactly one cluster.\n#\n",
    );
    for c in cases {
        let question = c.question.replace('\n', " ");
        let _ = writeln!(out, "# {} [{}] {}", c.query_id, c.failure_kind.as_str(), question);
    }
    out.push('\n');
    let body = toml::to_string(&ClusterFile {
        cluster: clusters.to_vec(),
    })
    .map_err(|e| MetapromptError::Io(e.to_string()))?;
    out.push_str(&body);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| MetapromptError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, out).map_err(|e| MetapromptError::Io(format!("{}: {e}", path.display())))
}

/// Re-reads the review file and checks that the clusters partition `cases`.
/// Clusters left empty are dropped.
pub fn load_cluster_file(path: &Path, cases: &[FailureCase]) -> Result<Vec<FailureCluster>, MetapromptError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| MetapromptError::Io(format!("{shown}: {e}")))?;
    let file: ClusterFile = toml::from_str(&text).map_err(|e| MetapromptError::Validation {
        path: shown.clone(),
        problems: vec![e.to_string().trim().to_string()],
    })?;

    let known: BTreeSet<&str> = cases.iter().map(|c| c.query_id.as_str()).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    let mut problems = Vec::new();
    for c in &file.cluster {
        if c.cluster_id.trim().is_empty() {
            problems.push("cluster with an empty id".to_string());
        } else if !ids.insert(c.cluster_id.as_str()) {
            problems.push(format!("duplicate cluster id {}", c.cluster_id));
        }
        for m in &c.member_ids {
            *seen.entry(m.as_str()).or_default() += 1;
        }
    }
    for (m, count) in &seen {
        if !known.contains(m) {
            problems.push(format!("unknown member {m}"));
        } else if *count > 1 {
            problems.push(format!("duplicated member {m}"));
        }
    }
    for k in &known {
        if !seen.contains_key(k) {
            problems.push(format!("orphaned member {k}"));
        }
    }
    if !problems.is_empty() {
        return Err(MetapromptError::Validation { path: shown, problems });
    }
    Ok(file.cluster.into_iter().filter(|c| !c.member_ids.is_empty()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaprompt::FailureKind;

    pub(crate) fn case(id: &str, question: &str, gold: &str, pred: &str) -> FailureCase {
        FailureCase {
            query_id: id.into(),
            question: question.into(),
            plan_text: String::new(),
            predicted_sql: pred.into(),
            gold_sql: gold.into(),
            predicted_result_digest: String::new(),
            gold_result_digest: String::new(),
            failure_kind: FailureKind::WrongResult,
        }
    }

    #[test]
    fn single_case_single_cluster() {
        let cs = vec![case("a", "q", "SELECT 1", "SELECT 2")];
        let out = cluster_failures(&cs, &Embedder::LexicalFallback, 3).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].member_ids, ["a"]);
        assert_eq!(out[0].cluster_id, "C1");
    }

    #[test]
    fn round_trip_accepts_moves_and_reports_partition_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.toml");
        let cs = vec![case("a", "x", "", ""), case("b", "y", "", ""), case("c", "z", "", "")];
        let clusters = vec![
            FailureCluster {
                cluster_id: "C1".into(),
                label: String::new(),
                member_ids: vec!["a".into(), "b".into()],
                notes: String::new(),
            },
            FailureCluster {
                cluster_id: "C2".into(),
                label: String::new(),
                member_ids: vec!["c".into()],
                notes: String::new(),
            },
        ];
        write_cluster_file(&path, &clusters, &cs).unwrap();
        assert_eq!(load_cluster_file(&path, &cs).unwrap(), clusters);

        let text = fs::read_to_string(&path).unwrap();
        let moved = text
            .replace("members = [\"a\", \"b\"]", "members = [\"a\"]")
            .replace("members = [\"c\"]", "members = [\"b\", \"c\"]")
            .replacen("label = \"\"", "label = \"ratios\"", 1);
        fs::write(&path, moved).unwrap();
        let back = load_cluster_file(&path, &cs).unwrap();
        assert_eq!(back[0].label, "ratios");
        assert_eq!(back[1].member_ids, ["b", "c"]);

        fs::write(&path, "[[cluster]]\nid = \"C1\"\nmembers = [\"a\", \"a\", \"q\"]\n").unwrap();
        match load_cluster_file(&path, &cs) {
            Err(MetapromptError::Validation { problems, .. }) => {
                assert!(problems.contains(&"duplicated member a".to_string()));
                assert!(problems.contains(&"unknown member q".to_string()));
                assert!(problems.contains(&"orphaned member b".to_string()));
                assert!(problems.contains(&"orphaned member c".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_clusters_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let cs = vec![case("a", "x", "", "")];
        fs::write(&path, "[[cluster]]\nid = \"C1\"\nmembers = [\"a\"]\n[[cluster]]\nid = \"C2\"\nmembers = []\n").unwrap();
        assert_eq!(load_cluster_file(&path, &cs).unwrap().len(), 1);
    }
}
