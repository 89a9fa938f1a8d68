//! Corpus analysis: frequent words, document-level co-occurrence, and the
//! mutual information between word presence and the sixteen-type label.

use std::collections::{BTreeMap, BTreeSet};

use crate::encoder::UserDocument;
use crate::error::{Error, Result};
use crate::pipeline::dataset::leakage_filter;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusAnalysis {
    /// Most frequent words after leakage filtering, with their token counts.
    pub top_words: Vec<(String, usize)>,
    /// Document-level co-occurrence counts between the top words, where a
    /// document is one user's full post set.
    pub cooccurrence: Vec<Vec<usize>>,
    /// Natural-log mutual information between each top word's presence
    /// indicator and the sixteen-type label, over labeled users.
    pub mutual_information: Vec<f64>,
}

/// Mutual information of a word-presence indicator against the type label,
/// from empirical joint counts. `present[t]` counts labeled docs of type `t`
/// containing the word; `total[t]` counts all labeled docs of type `t`.
fn presence_mi(present: &[usize; 16], total: &[usize; 16]) -> f64 {
    let n: usize = total.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let p_word: f64 = present.iter().sum::<usize>() as f64 / nf;
    let mut mi = 0.0;
    for t in 0..16 {
        let p_t = total[t] as f64 / nf;
        if p_t == 0.0 {
            continue;
        }
        for (joint_count, p_w) in [
            (present[t] as f64, p_word),
            ((total[t] - present[t]) as f64, 1.0 - p_word),
        ] {
            let p_joint = joint_count / nf;
            if p_joint > 0.0 && p_w > 0.0 {
                mi += p_joint * (p_joint / (p_w * p_t)).ln();
            }
        }
    }
    mi
}

/// Top-k frequent words, their co-occurrence matrix, and per-word MI with the
/// type label. Words are lowercased; frequency ties break lexicographically.
pub fn analyze_corpus(docs: &[UserDocument], top_k: usize) -> Result<CorpusAnalysis> {
    if docs.is_empty() {
        return Err(Error::invalid("cannot analyze an empty corpus"));
    }
    let filtered: Vec<Vec<String>> = docs.iter().map(|d| leakage_filter(&d.posts)).collect();

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for posts in &filtered {
        for post in posts {
            for tok in post.split_whitespace() {
                *counts.entry(tok.to_lowercase()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    let top_words = ranked;
    let k = top_words.len();

    // Per-document presence sets over the top words.
    let word_index: BTreeMap<&str, usize> = top_words
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.as_str(), i))
        .collect();
    let presence: Vec<BTreeSet<usize>> = filtered
        .iter()
        .map(|posts| {
            let mut set = BTreeSet::new();
            for post in posts {
                for tok in post.split_whitespace() {
                    if let Some(&i) = word_index.get(tok.to_lowercase().as_str()) {
                        set.insert(i);
                    }
                }
            }
            set
        })
        .collect();

    let mut cooccurrence = vec![vec![0usize; k]; k];
    for set in &presence {
        for &i in set {
            for &j in set {
                cooccurrence[i][j] += 1;
            }
        }
    }

    let mut mutual_information = vec![0.0; k];
    let mut totals = [0usize; 16];
    for doc in docs {
        if let Some(l) = doc.labels {
            totals[l.type_index()] += 1;
        }
    }
    for (w, mi) in mutual_information.iter_mut().enumerate() {
        let mut present = [0usize; 16];
        for (doc, set) in docs.iter().zip(&presence) {
            if let Some(l) = doc.labels {
                if set.contains(&w) {
                    present[l.type_index()] += 1;
                }
            }
        }
        *mi = presence_mi(&present, &totals);
    }

    Ok(CorpusAnalysis {
        top_words,
        cooccurrence,
        mutual_information,
    })
}
