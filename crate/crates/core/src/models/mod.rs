//! Toy transformers: an encoder tagger with a relation head and an
//! encoder-decoder for extractive summarization.
//!
//! Parameters live in `f64` [`Params`] during training and convert to tagged
//! 32-bit [`ParamStore`](crate::store::ParamStore) records for checkpoints
//! and noise injection. Record names follow `enc.{layer}.attn.q.weight`,
//! `dec.{layer}.cross.o.bias`, `head.rel.bilinear.weight` and so on.
//!
//! Token id 0 is padding in both models; padded keys are masked out of
//! attention and padded positions carry no loss.

mod layers;
mod optim;
mod params;
mod seq2seq;
mod tagger;

pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState, TrainConfig};
pub use params::{Param, Params, INIT_STD};
pub use seq2seq::{Seq2SeqExample, Seq2SeqModel, BOS, EOS};
pub use tagger::{decode_tags, pad_batch, SpanPair, TaggerModel, TaggerOutput, TaggingExample, ENTITY_LABELS, RELATION_LABELS, TAG_LABELS};

use crate::autodiff::GraphError;
use crate::store::{self, StoreError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const PAD: usize = 0;
/// Feed-forward width as a multiple of the model width.
pub const FFN_MULT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not fit the model: {0}")]
    Layout(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("config sidecar: {0}")]
    Sidecar(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_len: usize,
    /// Decoder depth; only the seq2seq model reads it.
    #[serde(default)]
    pub decoder_layers: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [("layers", self.layers), ("model_dim", self.model_dim), ("heads", self.heads), ("vocab", self.vocab), ("max_len", self.max_len)];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!("model_dim {} not divisible by {} heads", self.model_dim, self.heads)));
        }
        Ok(())
    }
}

/// Batches must be non-empty, rectangular, within `max_len` and the vocabulary.
pub(crate) fn check_batch(cfg: &ModelConfig, tokens: &[Vec<usize>]) -> Result<()> {
    let len = tokens.first().map(Vec::len).ok_or_else(|| ModelError::Shape("empty batch".into()))?;
    if len == 0 {
        return Err(ModelError::Shape("empty sequence".into()));
    }
    if let Some(row) = tokens.iter().find(|r| r.len() != len) {
        return Err(ModelError::Shape(format!("ragged batch: lengths {len} and {}", row.len())));
    }
    if len > cfg.max_len {
        return Err(ModelError::Shape(format!("sequence length {len} exceeds max_len {}", cfg.max_len)));
    }
    if let Some(&token) = tokens.iter().flatten().find(|&&t| t >= cfg.vocab) {
        return Err(ModelError::TokenOutOfRange { token, vocab: cfg.vocab });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tagger,
    Seq2seq,
}

/// JSON stored next to a checkpoint describing the model that wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelKind,
    pub config: ModelConfig,
}

/// `model.pkpt` → `model.pkpt.json`
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn save(params: &Params, sidecar: &Sidecar, path: &Path) -> Result<()> {
    store::write_checkpoint(&params.to_store(), path)?;
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), json + "\n").map_err(|e| ModelError::Sidecar(e.to_string()))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(sidecar_path(path)).map_err(|e| ModelError::Sidecar(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| ModelError::Sidecar(e.to_string()))
}

fn expect_kind(path: &Path, kind: ModelKind) -> Result<ModelConfig> {
    let side = read_sidecar(path)?;
    if side.model != kind {
        return Err(ModelError::Sidecar(format!("checkpoint holds a {:?} model", side.model)));
    }
    Ok(side.config)
}

impl TaggerModel {
    /// Rebuilds the parameter layout for `config` and loads `store` into it.
    pub fn from_store(config: ModelConfig, store: &store::ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_store(store)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save(&self.params, &Sidecar { model: ModelKind::Tagger, config: self.config.clone() }, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config = expect_kind(path, ModelKind::Tagger)?;
        Self::from_store(config, &store::read_checkpoint(path)?)
    }
}

impl Seq2SeqModel {
    pub fn from_store(config: ModelConfig, store: &store::ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_store(store)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save(&self.params, &Sidecar { model: ModelKind::Seq2seq, config: self.config.clone() }, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config = expect_kind(path, ModelKind::Seq2seq)?;
        Self::from_store(config, &store::read_checkpoint(path)?)
    }
}
