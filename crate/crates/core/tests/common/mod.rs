//! Shared generators and helpers for the integration tests.
#![allow(dead_code)]

use perturbkit::models::{ModelConfig, Seq2SeqModel, TaggerModel};
use perturbkit::selector::SelectorExpr;
use perturbkit::store::{ParamStore, TensorKind, TensorRecord, ZoneComponent, ZoneTag};
use proptest::prelude::*;
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn arb_kind() -> impl Strategy<Value = TensorKind> {
    prop::sample::select(TensorKind::ALL.to_vec())
}

pub fn arb_zone() -> impl Strategy<Value = ZoneTag> {
    prop_oneof![
        Just(ZoneTag::NONE),
        Just(ZoneTag::head()),
        Just(ZoneTag::new(ZoneComponent::Encoder)),
        (0u32..4).prop_map(ZoneTag::encoder),
        (0u32..4).prop_map(ZoneTag::decoder),
    ]
}

const SEGMENTS: [&str; 8] = ["enc", "dec", "head", "attn", "q", "ffn", "ln1", "0"];

pub fn arb_name() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::sample::select(SEGMENTS.to_vec()), 1..4), prop::sample::select(vec!["weight", "bias", "gain"]))
        .prop_map(|(segs, last)| format!("{}.{last}", segs.join(".")))
}

pub fn arb_record() -> impl Strategy<Value = TensorRecord> {
    (arb_name(), arb_kind(), arb_zone(), prop::collection::vec(-4.0f32..4.0, 1..24))
        .prop_map(|(name, kind, zone, data)| TensorRecord::new(name, vec![data.len()], data, kind, zone))
}

/// Stores with unique names (later duplicates are dropped).
pub fn arb_store() -> impl Strategy<Value = ParamStore> {
    prop::collection::vec(arb_record(), 0..10).prop_map(|recs| {
        let mut s = ParamStore::new();
        for r in recs {
            let _ = s.put(r);
        }
        s
    })
}

pub fn arb_selector() -> impl Strategy<Value = SelectorExpr> {
    let leaf = prop_oneof![
        Just(SelectorExpr::All),
        Just(SelectorExpr::None),
        arb_kind().prop_map(SelectorExpr::KindIs),
        prop::sample::select(vec!["*", "enc.*", "*.bias", "*.0.*", "head.*.weight", "dec.*attn*"]).prop_map(|p| SelectorExpr::NameGlob(p.to_owned())),
        prop::sample::select(vec![ZoneComponent::None, ZoneComponent::Encoder, ZoneComponent::Decoder, ZoneComponent::Head])
            .prop_map(SelectorExpr::ZoneIs),
        (0u32..4, 1u32..3).prop_map(|(lo, w)| SelectorExpr::LayerIn(lo, lo + w)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(SelectorExpr::negate),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| SelectorExpr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| SelectorExpr::or(a, b)),
        ]
    })
}

pub fn tagger_config() -> ModelConfig {
    ModelConfig { layers: 4, model_dim: 8, heads: 2, vocab: 16, max_len: 8, decoder_layers: 0 }
}

pub fn seq2seq_config() -> ModelConfig {
    ModelConfig { layers: 4, model_dim: 8, heads: 2, vocab: 16, max_len: 8, decoder_layers: 2 }
}

/// Initialized toy-model stores: tagger and seq2seq.
pub fn model_stores() -> Vec<(&'static str, ParamStore)> {
    vec![
        ("tagger", TaggerModel::new(tagger_config(), 3).unwrap().params.to_store()),
        ("seq2seq", Seq2SeqModel::new(seq2seq_config(), 3).unwrap().params.to_store()),
    ]
}

/// Names whose bytes differ between two stores with the same layout.
pub fn changed_names(a: &ParamStore, b: &ParamStore) -> Vec<String> {
    a.iter()
        .zip(b.iter())
        .filter(|(x, y)| {
            assert_eq!(x.name, y.name);
            x.data.iter().map(|v| v.to_bits()).ne(y.data.iter().map(|v| v.to_bits()))
        })
        .map(|(x, _)| x.name.clone())
        .collect()
}
