use std::collections::BTreeSet;

use proptest::prelude::*;

use plansql_core::metaprompt::{
    case_document, cluster_failures, load_cluster_file, write_cluster_file, FailureCase, FailureCluster, FailureKind,
    MetapromptError,
};
use plansql_core::retrieval::{cosine, Embedder};

const WORDS: &[&str] = &[
    "percentage", "singers", "France", "average", "budget", "department", "if", "were", "older", "students", "count",
    "SELECT", "100.0", "CASE", "WHEN", "stadium", "capacity",
];

fn case(i: usize, words: &[usize]) -> FailureCase {
    let text: Vec<&str> = words.iter().map(|&w| WORDS[w % WORDS.len()]).collect();
    FailureCase {
        query_id: format!("q{i:02}"),
        question: text.join(" "),
        plan_text: "Step 1: x".into(),
        predicted_sql: format!("SELECT {}", words.len()),
        gold_sql: "SELECT 1".into(),
        predicted_result_digest: "p".into(),
        gold_result_digest: "g".into(),
        failure_kind: FailureKind::WrongResult,
    }
}

/// Average linkage over explicit member sets. Candidate pairs are visited in
/// order of their smallest members and only a strictly better score replaces
/// the current best.
fn oracle(cases: &[FailureCase], max_clusters: usize) -> Vec<BTreeSet<usize>> {
    let docs: Vec<String> = cases.iter().map(case_document).collect();
    let (_, vectors) = Embedder::LexicalFallback.fit(&docs).unwrap();
    let mut clusters: Vec<BTreeSet<usize>> = (0..cases.len()).map(|i| BTreeSet::from([i])).collect();
    while clusters.len() > max_clusters {
        clusters.sort_by_key(|c| *c.first().unwrap());
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += cosine(&vectors[i], &vectors[j]);
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(s, _, _)| avg > s) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (_, a, b) = best.unwrap();
        let merged: BTreeSet<usize> = clusters[a].union(&clusters[b]).copied().collect();
        clusters.remove(b);
        clusters[a] = merged;
    }
    clusters.sort_by_key(|c| *c.first().unwrap());
    clusters
}

fn as_sets(clusters: &[FailureCluster], cases: &[FailureCase]) -> Vec<BTreeSet<usize>> {
    clusters
        .iter()
        .map(|c| {
            c.member_ids
                .iter()
                .map(|id| cases.iter().position(|k| &k.query_id == id).unwrap())
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_the_average_linkage_oracle(
        docs in prop::collection::vec(prop::collection::vec(0usize..WORDS.len(), 1..6), 1..9),
        max_clusters in 1usize..5,
    ) {
        let cases: Vec<FailureCase> = docs.iter().enumerate().map(|(i, w)| case(i, w)).collect();
        let got = cluster_failures(&cases, &Embedder::LexicalFallback, max_clusters).unwrap();
        prop_assert_eq!(got.len(), cases.len().min(max_clusters));
        let ids: Vec<String> = (1..=got.len()).map(|k| format!("C{k}")).collect();
        prop_assert_eq!(got.iter().map(|c| c.cluster_id.clone()).collect::<Vec<_>>(), ids);
        prop_assert_eq!(as_sets(&got, &cases), oracle(&cases, max_clusters));
    }

    #[test]
    fn review_file_round_trips_any_regrouping(
        docs in prop::collection::vec(prop::collection::vec(0usize..WORDS.len(), 1..4), 2..8),
        moves in prop::collection::vec((0usize..8, 0usize..3), 0..6),
    ) {
        let cases: Vec<FailureCase> = docs.iter().enumerate().map(|(i, w)| case(i, w)).collect();
        let mut clusters = cluster_failures(&cases, &Embedder::LexicalFallback, 3).unwrap();
        for (member, to) in moves {
            let id = cases[member % cases.len()].query_id.clone();
            for c in clusters.iter_mut() {
                c.member_ids.retain(|m| m != &id);
            }
            let target = to % clusters.len();
            clusters[target].member_ids.push(id);
            clusters[target].label = format!("group {target}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.toml");
        write_cluster_file(&path, &clusters, &cases).unwrap();
        let back = load_cluster_file(&path, &cases).unwrap();
        clusters.retain(|c| !c.member_ids.is_empty());
        prop_assert_eq!(back, clusters);
    }
}

#[test]
fn broken_partitions_are_reported() {
    let cases: Vec<FailureCase> = (0..3).map(|i| case(i, &[i, i + 1])).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clusters.toml");
    std::fs::write(
        &path,
        "[[cluster]]\nid = \"C1\"\nlabel = \"a\"\nmembers = [\"q00\", \"q00\", \"zz\"]\nnotes = \"\"\n",
    )
    .unwrap();
    let Err(MetapromptError::Validation { problems, .. }) = load_cluster_file(&path, &cases) else {
        panic!("expected a validation error");
    };
    let text = problems.join("\n");
    for needle in ["duplicated member q00", "unknown member zz", "orphaned member q01", "orphaned member q02"] {
        assert!(text.contains(needle), "missing `{needle}` in {text}");
    }
}
