//! ROUGE-N, ROUGE-L and summary-level ROUGE-Lsum.
//!
//! Scores operate on token slices of any hashable type, so the synthetic
//! tasks can score integer ids directly. For text, [`tokenize`] lowercases
//! and splits on runs of non-alphanumeric characters, and [`sentences`]
//! splits on newlines.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hash;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return Prf::default();
        }
        let precision = hits as f64 / cand_total as f64;
        let recall = hits as f64 / ref_total as f64;
        let f1 = if hits == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Newline-separated sentences, tokenized; blank lines are dropped.
pub fn sentences(text: &str) -> Vec<Vec<String>> {
    text.lines().map(tokenize).filter(|s| !s.is_empty()).collect()
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram overlap. Zero when either side has fewer than `n` tokens.
pub fn rouge_n<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be at least 1");
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let hits = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(hits, candidate.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

fn lcs_table<T: Eq>(a: &[T], b: &[T]) -> Vec<Vec<u32>> {
    let mut t = vec![vec![0u32; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    lcs_table(a, b)[a.len()][b.len()] as usize
}

/// Indices into `a` of one longest common subsequence with `b`.
fn lcs_indices<T: Eq>(a: &[T], b: &[T]) -> Vec<usize> {
    let t = lcs_table(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i - 1][j] >= t[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Summary-level LCS: for each reference sentence, the union of its LCS
/// tokens against every candidate sentence; hits are clipped by token counts
/// on both sides.
pub fn rouge_lsum<T: Hash + Eq + Clone>(candidate: &[Vec<T>], reference: &[Vec<T>]) -> Prf {
    let cand_total: usize = candidate.iter().map(Vec::len).sum();
    let ref_total: usize = reference.iter().map(Vec::len).sum();
    let count = |sents: &[Vec<T>]| {
        let mut m: HashMap<T, usize> = HashMap::new();
        for t in sents.iter().flatten() {
            *m.entry(t.clone()).or_insert(0) += 1;
        }
        m
    };
    let mut cand_left = count(candidate);
    let mut ref_left = count(reference);
    let mut hits = 0;
    for r in reference {
        let mut union: Vec<usize> = candidate.iter().flat_map(|c| lcs_indices(r, c)).collect();
        union.sort_unstable();
        union.dedup();
        for idx in union {
            let tok = &r[idx];
            let (Some(cl), Some(rl)) = (cand_left.get_mut(tok), ref_left.get_mut(tok)) else { continue };
            if *cl > 0 && *rl > 0 {
                *cl -= 1;
                *rl -= 1;
                hits += 1;
            }
        }
    }
    Prf::from_counts(hits, cand_total, ref_total)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: f64,
}

impl RougeScores {
    /// Mean of the four F1 values.
    pub fn average(&self) -> f64 {
        (self.rouge1 + self.rouge2 + self.rouge_l + self.rouge_lsum) / 4.0
    }

    /// F1 scores for sentence-segmented token sequences.
    pub fn from_sentences<T: Hash + Eq + Clone>(candidate: &[Vec<T>], reference: &[Vec<T>]) -> Self {
        let flat_c: Vec<T> = candidate.iter().flatten().cloned().collect();
        let flat_r: Vec<T> = reference.iter().flatten().cloned().collect();
        RougeScores {
            rouge1: rouge_n(&flat_c, &flat_r, 1).f1,
            rouge2: rouge_n(&flat_c, &flat_r, 2).f1,
            rouge_l: rouge_l(&flat_c, &flat_r).f1,
            rouge_lsum: rouge_lsum(candidate, reference).f1,
        }
    }

    pub fn from_text(candidate: &str, reference: &str) -> Self {
        Self::from_sentences(&sentences(candidate), &sentences(reference))
    }
}

/// Mean of ROUGE-1, ROUGE-2, ROUGE-L and ROUGE-Lsum F1 for two texts.
pub fn rouge_average(candidate: &str, reference: &str) -> f64 {
    RougeScores::from_text(candidate, reference).average()
}
