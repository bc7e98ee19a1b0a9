//! Synthetic datasets over integer vocabularies.
//!
//! Tagging sentences hold one or two "metric" groups: a 1–2 token metric
//! name followed by one or two amounts, each introduced by a period cue.
//! The cue decides whether an amount is current-year (`cy`) or prior-year
//! (`py`); the metric relates to each amount of its group.
//!
//! Summarization sources are `SEP`-separated sentences, some preceded by
//! `MARK`; the target is the marked sentences in order.

use super::HarnessError;
use crate::metrics::{EntitySpan, RelationInstance};
use crate::models::{Seq2SeqExample, TaggingExample, PAD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How the fine-tuning task differs from the pre-training task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShift {
    /// Swap which period cue marks current-year vs prior-year amounts.
    #[serde(default)]
    pub swap_labels: bool,
    /// Offset of the filler / content token range.
    #[serde(default)]
    pub token_offset: usize,
}

impl TaskShift {
    pub const NONE: TaskShift = TaskShift { swap_labels: false, token_offset: 0 };
}

impl Default for TaskShift {
    fn default() -> Self {
        Self::NONE
    }
}

// Tagging vocabulary layout.
const CUE_CURRENT: usize = 1;
const CUE_PRIOR: usize = 2;
const METRIC_TOKENS: std::ops::Range<usize> = 4..20;
const AMOUNT_TOKENS: std::ops::Range<usize> = 20..36;
const FILLER_START: usize = 36;
const FILLER_COUNT: usize = 16;

/// Smallest vocabulary that holds tagging data generated with `shift`.
pub fn tagging_vocab(shift: &TaskShift) -> usize {
    FILLER_START + FILLER_COUNT + shift.token_offset
}

/// Longest tagging sentence the generator produces.
pub const TAGGING_MAX_LEN: usize = 20;

fn filler(rng: &mut ChaCha8Rng, shift: &TaskShift) -> usize {
    FILLER_START + shift.token_offset + rng.gen_range(0..FILLER_COUNT)
}

fn tagging_sentence(rng: &mut ChaCha8Rng, shift: &TaskShift) -> TaggingExample {
    let mut tokens = Vec::new();
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let push_fillers = |tokens: &mut Vec<usize>, rng: &mut ChaCha8Rng, max: usize| {
        for _ in 0..rng.gen_range(0..=max) {
            tokens.push(filler(rng, shift));
        }
    };
    let groups = rng.gen_range(1..=2);
    push_fillers(&mut tokens, rng, 1);
    for _ in 0..groups {
        let start = tokens.len() as u32;
        let metric_len = rng.gen_range(1..=2);
        for _ in 0..metric_len {
            tokens.push(rng.gen_range(METRIC_TOKENS));
        }
        let metric = EntitySpan::new(start..start + metric_len, "kpi");
        entities.push(metric.clone());
        push_fillers(&mut tokens, rng, 1);
        let mut periods = vec![true, false];
        periods.shuffle(rng);
        if rng.gen_bool(0.3) {
            periods.pop();
        }
        for current in periods {
            tokens.push(if current { CUE_CURRENT } else { CUE_PRIOR });
            let pos = tokens.len() as u32;
            tokens.push(rng.gen_range(AMOUNT_TOKENS));
            let is_cy = current != shift.swap_labels;
            let label = if is_cy { "cy" } else { "py" };
            let amount = EntitySpan::new([pos], label);
            entities.push(amount.clone());
            relations.push(RelationInstance::new(format!("kpi-{label}"), metric.clone(), amount));
        }
        push_fillers(&mut tokens, rng, 1);
    }
    debug_assert!(tokens.len() <= TAGGING_MAX_LEN && !tokens.contains(&PAD));
    TaggingExample { tokens, entities, relations }
}

pub fn gen_tagging_data(seed: u64, size: usize, shift: &TaskShift) -> Result<Vec<TaggingExample>, HarnessError> {
    if size == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..size).map(|_| tagging_sentence(&mut rng, shift)).collect())
}

// Summarization vocabulary layout (BOS = 1 and EOS = 2 come from the model).
pub const SEP: usize = 3;
pub const MARK: usize = 4;
const CONTENT_START: usize = 5;
const CONTENT_COUNT: usize = 20;
const SENTENCES: usize = 3;
const MAX_SENTENCE: usize = 3;

pub fn seq2seq_vocab(shift: &TaskShift) -> usize {
    CONTENT_START + CONTENT_COUNT + shift.token_offset
}

/// Longest source sequence: every sentence at full length, all separators,
/// and all but one sentence marked.
pub const SEQ2SEQ_MAX_SOURCE: usize = SENTENCES * MAX_SENTENCE + (SENTENCES - 1) * 2;
/// Longest target plus the decoder's `BOS`.
pub const SEQ2SEQ_MAX_TARGET: usize = (SENTENCES - 1) * (MAX_SENTENCE + 1);

pub fn gen_seq2seq_data(seed: u64, size: usize, shift: &TaskShift) -> Result<Vec<Seq2SeqExample>, HarnessError> {
    if size == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let marked_count = rng.gen_range(1..SENTENCES);
        let mut marked = [false; SENTENCES];
        for m in marked.iter_mut().take(marked_count) {
            *m = true;
        }
        marked.shuffle(&mut rng);
        let mut source = Vec::new();
        let mut target = Vec::new();
        for (i, &is_marked) in marked.iter().enumerate() {
            if i > 0 {
                source.push(SEP);
            }
            if is_marked {
                source.push(MARK);
                if !target.is_empty() {
                    target.push(SEP);
                }
            }
            for _ in 0..rng.gen_range(2..=MAX_SENTENCE) {
                let tok = CONTENT_START + shift.token_offset + rng.gen_range(0..CONTENT_COUNT);
                source.push(tok);
                if is_marked {
                    target.push(tok);
                }
            }
        }
        out.push(Seq2SeqExample { source, target });
    }
    Ok(out)
}

/// Splits a token sequence into `SEP`-delimited sentences.
pub fn split_sentences(tokens: &[usize]) -> Vec<Vec<usize>> {
    tokens.split(|&t| t == SEP).filter(|s| !s.is_empty()).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagging_is_deterministic_and_sized() {
        let a = gen_tagging_data(7, 100, &TaskShift::NONE).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, gen_tagging_data(7, 100, &TaskShift::NONE).unwrap());
        assert_ne!(a, gen_tagging_data(8, 100, &TaskShift::NONE).unwrap());
    }

    #[test]
    fn tagging_contract() {
        let shift = TaskShift { swap_labels: true, token_offset: 5 };
        for ex in gen_tagging_data(1, 500, &shift).unwrap() {
            assert!(!ex.relations.is_empty());
            assert!(ex.tokens.len() <= TAGGING_MAX_LEN);
            assert!(ex.tokens.iter().all(|&t| t != PAD && t < tagging_vocab(&shift)));
            for r in &ex.relations {
                assert!(r.label == "kpi-cy" || r.label == "kpi-py");
                assert_eq!(r.label, format!("kpi-{}", r.tail.label));
                assert!(ex.entities.contains(&r.head) && ex.entities.contains(&r.tail));
            }
            // tags are consistent with the spans
            assert_eq!(crate::models::decode_tags(&ex.tags(), &ex.tokens), ex.entities);
        }
    }

    #[test]
    fn label_swap_flips_periods() {
        let a = gen_tagging_data(3, 50, &TaskShift::NONE).unwrap();
        let b = gen_tagging_data(3, 50, &TaskShift { swap_labels: true, token_offset: 0 }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tokens, y.tokens);
            for (ex, ey) in x.entities.iter().zip(&y.entities) {
                let flipped = match ex.label.as_str() {
                    "cy" => "py",
                    "py" => "cy",
                    l => l,
                };
                assert_eq!(ey.label, flipped);
            }
        }
    }

    #[test]
    fn seq2seq_contract() {
        let shift = TaskShift { swap_labels: false, token_offset: 3 };
        let data = gen_seq2seq_data(4, 300, &shift).unwrap();
        assert_eq!(data, gen_seq2seq_data(4, 300, &shift).unwrap());
        for ex in &data {
            assert!(ex.target.len() < ex.source.len());
            assert!(ex.source.len() <= SEQ2SEQ_MAX_SOURCE);
            assert!(ex.target.len() < SEQ2SEQ_MAX_TARGET);
            assert!(ex.target.iter().all(|t| ex.source.contains(t)));
            assert!(ex.source.iter().all(|&t| t < seq2seq_vocab(&shift) && t > crate::models::EOS));
        }
    }

    #[test]
    fn empty_datasets_rejected() {
        assert!(matches!(gen_seq2seq_data(0, 0, &TaskShift::NONE), Err(HarnessError::EmptyDataset)));
        assert!(matches!(gen_tagging_data(0, 0, &TaskShift::NONE), Err(HarnessError::EmptyDataset)));
    }

    #[test]
    fn sentence_split() {
        assert_eq!(split_sentences(&[5, 6, SEP, 7, SEP]), vec![vec![5, 6], vec![7]]);
        assert!(split_sentences(&[]).is_empty());
    }
}
