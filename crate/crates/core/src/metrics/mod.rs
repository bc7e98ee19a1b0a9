//! Evaluation metrics: partial-credit relation F1 and ROUGE.

mod relation;
mod rouge;

pub use relation::{
    adjusted_f1, match_relations, overlap, relation_counts, score_relation, EntitySpan, RelationCounts, RelationInstance, RelationScore,
};
pub use rouge::{lcs_len, rouge_average, rouge_l, rouge_lsum, rouge_n, sentences, tokenize, Prf, RougeScores};
