//! Character-trigram TF-IDF. Sparse vectors live in ordered maps and all
//! arithmetic runs in a fixed order, so scores are bit-identical across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub type SparseVector = BTreeMap<String, f64>;

/// Lowercases and replaces every non-alphanumeric character (including `_`
/// and `.`) with a space, so `singer_in_concert` tokenizes like prose.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            out.push(ch);
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Trigram counts over space-padded tokens.
pub fn trigram_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for token in normalize(text).split(' ').filter(|t| !t.is_empty()) {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(token.chars())
            .chain(std::iter::once(' '))
            .collect();
        for w in padded.windows(3) {
            *counts.entry(w.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub documents: usize,
    /// Document frequency per trigram.
    pub document_frequency: BTreeMap<String, u32>,
}

impl TfidfModel {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut document_frequency = BTreeMap::new();
        for doc in docs {
            for gram in trigram_counts(doc.as_ref()).into_keys() {
                *document_frequency.entry(gram).or_insert(0) += 1;
            }
        }
        Self {
            documents: docs.len(),
            document_frequency,
        }
    }

    /// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
    /// Uses the software `libm` logarithm for platform-independent bits.
    pub fn idf(&self, gram: &str) -> f64 {
        let df = self.document_frequency.get(gram).copied().unwrap_or(0);
        libm::log((1.0 + self.documents as f64) / (1.0 + f64::from(df))) + 1.0
    }

    /// L2-normalized TF-IDF vector; empty input yields an empty vector.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut v: SparseVector = trigram_counts(text)
            .into_iter()
            .map(|(g, c)| {
                let w = f64::from(c) * self.idf(&g);
                (g, w)
            })
            .collect();
        let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for w in v.values_mut() {
                *w /= norm;
            }
        }
        v
    }
}

/// Dot product of two normalized sparse vectors, summed in key order.
pub fn sparse_cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(k, x)| large.get(k).map(|y| x * y))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_splits_identifiers() {
        assert_eq!(normalize("singer_in_concert.Name"), "singer in concert name");
        assert_eq!(normalize("  How many, singers?? "), "how many singers");
        assert_eq!(normalize("格里公园有几个音乐会"), "格里公园有几个音乐会");
    }

    #[test]
    fn trigrams_are_padded() {
        let c = trigram_counts("ab");
        assert_eq!(c.keys().cloned().collect::<Vec<_>>(), vec![" ab", "ab "]);
        assert!(trigram_counts("").is_empty());
    }

    #[test]
    fn identical_text_has_unit_similarity() {
        let m = TfidfModel::fit(&["singer name", "concert year"]);
        let a = m.transform("singer name");
        assert!((sparse_cosine(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(sparse_cosine(&a, &m.transform("")), 0.0);
    }

    #[test]
    fn idf_prefers_rare_grams() {
        let m = TfidfModel::fit(&["aaa", "aaa", "bbb"]);
        assert!(m.idf(" bb") > m.idf(" aa"));
        assert!(m.idf("zzz") > m.idf(" bb"));
    }
}
