//! Partial-credit F1 for joint entity and relation extraction.
//!
//! A predicted relation matched to a gold relation earns fractional counts
//! from the token overlap of its two entities:
//!
//! ```text
//! o_i  = |pred_i ∩ gold_i|
//! tp_r = (o_head / n_head_gold + o_tail / n_tail_gold) / 2
//! fn_r = 1 - tp_r
//! fp_r = ((n_head_pred - o_head) / n_head_pred + (n_tail_pred - o_tail) / n_tail_pred) / 2
//! ```
//!
//! Unmatched predictions add `fp = 1`, unmatched gold relations add `fn = 1`,
//! and `F1 = 2 TP / (2 TP + FP + FN)` over the micro-summed counts.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    #[serde(rename = "tokens")]
    pub token_ids: BTreeSet<u32>,
    pub label: String,
}

impl EntitySpan {
    pub fn new(tokens: impl IntoIterator<Item = u32>, label: impl Into<String>) -> Self {
        Self { token_ids: tokens.into_iter().collect(), label: label.into() }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationInstance {
    pub label: String,
    pub head: EntitySpan,
    pub tail: EntitySpan,
}

impl RelationInstance {
    pub fn new(label: impl Into<String>, head: EntitySpan, tail: EntitySpan) -> Self {
        Self { label: label.into(), head, tail }
    }

    /// Labels agree on the relation and on both entity types.
    pub fn compatible(&self, other: &RelationInstance) -> bool {
        self.label == other.label && self.head.label == other.head.label && self.tail.label == other.tail.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
}

pub fn overlap(pred: &EntitySpan, gt: &EntitySpan) -> usize {
    pred.token_ids.intersection(&gt.token_ids).count()
}

/// Fractional counts for one predicted/gold pair. Spans must be non-empty.
pub fn score_relation(pred: &RelationInstance, gt: &RelationInstance) -> RelationScore {
    let side = |p: &EntitySpan, g: &EntitySpan| {
        let o = overlap(p, g) as f64;
        (o / g.len() as f64, (p.len() as f64 - o) / p.len() as f64)
    };
    let (rh, fh) = side(&pred.head, &gt.head);
    let (rt, ft) = side(&pred.tail, &gt.tail);
    let tp = 0.5 * (rh + rt);
    RelationScore { tp, fn_: 1.0 - tp, fp: 0.5 * (fh + ft) }
}

/// Summed counts; add per-sentence results together for corpus-level F1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelationCounts {
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub fp: f64,
    pub predicted: usize,
    pub gold: usize,
}

impl RelationCounts {
    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.gold == 0 {
            return 1.0;
        }
        let denom = 2.0 * self.tp + self.fp + self.fn_;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * self.tp / denom
        }
    }
}

impl std::ops::AddAssign for RelationCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.predicted += o.predicted;
        self.gold += o.gold;
    }
}

impl std::iter::Sum for RelationCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut a, b| {
            a += b;
            a
        })
    }
}

/// Greedy one-to-one matching.
///
/// Candidates are compatible pairs with positive `tp`; they are taken in
/// descending `tp`, then ascending `fp`, then by the content order of the
/// prediction and of the gold relation. Ordering by content rather than by
/// list position makes the result independent of how either list is ordered.
pub fn match_relations(preds: &[RelationInstance], gts: &[RelationInstance]) -> Vec<(usize, usize, RelationScore)> {
    let mut cands: Vec<(usize, usize, RelationScore)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            if p.compatible(g) {
                let s = score_relation(p, g);
                if s.tp > 0.0 {
                    cands.push((pi, gi, s));
                }
            }
        }
    }
    cands.sort_by(|a, b| {
        b.2.tp.total_cmp(&a.2.tp).then(a.2.fp.total_cmp(&b.2.fp)).then_with(|| preds[a.0].cmp(&preds[b.0])).then_with(|| gts[a.1].cmp(&gts[b.1]))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut gold_used = vec![false; gts.len()];
    let mut out = Vec::new();
    for (pi, gi, s) in cands {
        if !pred_used[pi] && !gold_used[gi] {
            pred_used[pi] = true;
            gold_used[gi] = true;
            out.push((pi, gi, s));
        }
    }
    out
}

pub fn relation_counts(preds: &[RelationInstance], gts: &[RelationInstance]) -> RelationCounts {
    let matched = match_relations(preds, gts);
    let mut c = RelationCounts { predicted: preds.len(), gold: gts.len(), ..Default::default() };
    for (_, _, s) in &matched {
        c.tp += s.tp;
        c.fn_ += s.fn_;
        c.fp += s.fp;
    }
    c.fp += (preds.len() - matched.len()) as f64;
    c.fn_ += (gts.len() - matched.len()) as f64;
    c
}

/// Micro F1 over one relation list. Both empty scores 1.
pub fn adjusted_f1(preds: &[RelationInstance], gts: &[RelationInstance]) -> f64 {
    relation_counts(preds, gts).f1()
}
