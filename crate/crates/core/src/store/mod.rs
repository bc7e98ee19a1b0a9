//! Named, metadata-tagged parameter storage.
//!
//! A [`ParamStore`] is an insertion-ordered collection of [`TensorRecord`]s.
//! Every record carries an explicit [`TensorKind`] and [`ZoneTag`]; selectors
//! evaluate against that metadata and never against the record name, so a
//! store read from disk selects the same way regardless of naming scheme.

mod checkpoint;

pub use checkpoint::{read_checkpoint, read_checkpoint_bytes, write_checkpoint, write_checkpoint_bytes, MAGIC, VERSION};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}`: shape {shape:?} implies {expected} elements but data has {actual}")]
    ShapeMismatch { name: String, shape: Vec<usize>, expected: usize, actual: usize },
    #[error("tensor `{name}`: non-finite value at element {index}")]
    NonFiniteValue { name: String, index: usize },
    #[error("invalid tensor name `{0}`")]
    InvalidName(String),
    #[error("tensor `{0}`: layer index is only allowed in encoder or decoder zones")]
    InvalidZone(String),
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    TruncatedFile(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("no tensor named `{0}`")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// What role a tensor plays inside its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Bias,
    LayerNormGain,
    LayerNormBias,
    Embedding,
    Other,
}

impl TensorKind {
    pub const ALL: [TensorKind; 6] =
        [TensorKind::Weight, TensorKind::Bias, TensorKind::LayerNormGain, TensorKind::LayerNormBias, TensorKind::Embedding, TensorKind::Other];

    pub fn code(self) -> u8 {
        match self {
            TensorKind::Weight => 0,
            TensorKind::Bias => 1,
            TensorKind::LayerNormGain => 2,
            TensorKind::LayerNormBias => 3,
            TensorKind::Embedding => 4,
            TensorKind::Other => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Canonical lower-case identifier, as accepted by the selector language.
    pub fn ident(self) -> &'static str {
        match self {
            TensorKind::Weight => "weight",
            TensorKind::Bias => "bias",
            TensorKind::LayerNormGain => "ln_gain",
            TensorKind::LayerNormBias => "ln_bias",
            TensorKind::Embedding => "embedding",
            TensorKind::Other => "other",
        }
    }
}

impl fmt::Display for TensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.ident())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneComponent {
    None,
    Encoder,
    Decoder,
    Head,
}

impl ZoneComponent {
    pub const ALL: [ZoneComponent; 4] = [ZoneComponent::None, ZoneComponent::Encoder, ZoneComponent::Decoder, ZoneComponent::Head];

    pub fn code(self) -> u8 {
        match self {
            ZoneComponent::None => 0,
            ZoneComponent::Encoder => 1,
            ZoneComponent::Decoder => 2,
            ZoneComponent::Head => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn ident(self) -> &'static str {
        match self {
            ZoneComponent::None => "none",
            ZoneComponent::Encoder => "encoder",
            ZoneComponent::Decoder => "decoder",
            ZoneComponent::Head => "head",
        }
    }
}

impl fmt::Display for ZoneComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.ident())
    }
}

/// Where a tensor lives in the model: which stack, and which layer of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZoneTag {
    pub component: ZoneComponent,
    pub layer: Option<u32>,
}

impl ZoneTag {
    pub const NONE: ZoneTag = ZoneTag { component: ZoneComponent::None, layer: None };

    pub fn new(component: ZoneComponent) -> Self {
        Self { component, layer: None }
    }

    pub fn encoder(layer: u32) -> Self {
        Self { component: ZoneComponent::Encoder, layer: Some(layer) }
    }

    pub fn decoder(layer: u32) -> Self {
        Self { component: ZoneComponent::Decoder, layer: Some(layer) }
    }

    pub fn head() -> Self {
        Self::new(ZoneComponent::Head)
    }

    fn is_valid(&self) -> bool {
        self.layer.is_none() || matches!(self.component, ZoneComponent::Encoder | ZoneComponent::Decoder)
    }
}

impl Default for ZoneTag {
    fn default() -> Self {
        Self::NONE
    }
}

/// A named, shape-tagged flat `f32` array in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub kind: TensorKind,
    pub zone: ZoneTag,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>, kind: TensorKind, zone: ZoneTag) -> Self {
        Self { name: name.into(), shape, data, kind, zone }
    }

    /// Builds a record with kind and zone guessed from its name.
    pub fn inferred(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        let name = name.into();
        let (kind, zone) = infer_metadata(&name);
        Self { name, shape, data, kind, zone }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !is_valid_name(&self.name) {
            return Err(StoreError::InvalidName(self.name.clone()));
        }
        let expected: usize = self.shape.iter().product();
        if self.shape.is_empty() || self.shape.contains(&0) || expected != self.data.len() {
            return Err(StoreError::ShapeMismatch { name: self.name.clone(), shape: self.shape.clone(), expected, actual: self.data.len() });
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteValue { name: self.name.clone(), index });
        }
        if !self.zone.is_valid() {
            return Err(StoreError::InvalidZone(self.name.clone()));
        }
        Ok(())
    }
}

/// `[A-Za-z0-9_]+(\.[A-Za-z0-9_]+)*`
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty() && name.split('.').all(|seg| !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_'))
}

/// Guesses kind and zone from a dotted name.
///
/// Advisory only: used when ingesting checkpoints that carry no metadata.
/// Suffix `.weight` / `.bias` picks the kind (promoted to the layer-norm kinds
/// when a segment starts with `ln` or contains `norm`); an `enc`/`encoder` or
/// `dec`/`decoder` first segment picks the zone, and the first purely numeric
/// segment becomes the layer index.
pub fn infer_metadata(name: &str) -> (TensorKind, ZoneTag) {
    let segs: Vec<&str> = name.split('.').collect();
    let is_norm = segs.iter().any(|s| s.starts_with("ln") || s.ends_with("_ln") || s.contains("norm"));
    let is_emb = segs.iter().any(|s| s.starts_with("emb") || s.contains("embed") || *s == "pos");
    let kind = match segs.last().copied() {
        Some("weight") | Some("gain") | Some("gamma") if is_norm => TensorKind::LayerNormGain,
        Some("bias") | Some("beta") if is_norm => TensorKind::LayerNormBias,
        Some("weight") if is_emb => TensorKind::Embedding,
        Some("weight") => TensorKind::Weight,
        Some("bias") => TensorKind::Bias,
        _ => TensorKind::Other,
    };
    let component = match segs.first().copied() {
        Some("enc") | Some("encoder") => ZoneComponent::Encoder,
        Some("dec") | Some("decoder") => ZoneComponent::Decoder,
        Some("head") => ZoneComponent::Head,
        _ => ZoneComponent::None,
    };
    let layer = match component {
        ZoneComponent::Encoder | ZoneComponent::Decoder => segs.iter().find_map(|s| s.parse::<u32>().ok()),
        _ => None,
    };
    (kind, ZoneTag { component, layer })
}

/// Insertion-ordered collection of uniquely named tensor records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    records: IndexMap<String, TensorRecord>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a validated record. Existing records are never touched.
    pub fn put(&mut self, rec: TensorRecord) -> Result<()> {
        rec.validate()?;
        if self.records.contains_key(&rec.name) {
            return Err(StoreError::DuplicateName(rec.name));
        }
        self.records.insert(rec.name.clone(), rec);
        Ok(())
    }

    /// Builder-style [`put`](Self::put).
    pub fn with(mut self, rec: TensorRecord) -> Result<Self> {
        self.put(rec)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.get(name)
    }

    /// Swaps in new data for an existing record, keeping its position.
    pub fn replace(&mut self, rec: TensorRecord) -> Result<()> {
        rec.validate()?;
        match self.records.get_mut(&rec.name) {
            Some(slot) => {
                *slot = rec;
                Ok(())
            }
            None => Err(StoreError::Missing(rec.name)),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &TensorRecord> {
        self.records.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn total_elements(&self) -> usize {
        self.iter().map(TensorRecord::numel).sum()
    }
}

impl<'a> IntoIterator for &'a ParamStore {
    type Item = &'a TensorRecord;
    type IntoIter = indexmap::map::Values<'a, String, TensorRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.values()
    }
}

impl TryFrom<Vec<TensorRecord>> for ParamStore {
    type Error = StoreError;

    fn try_from(recs: Vec<TensorRecord>) -> Result<Self> {
        let mut store = ParamStore::new();
        for r in recs {
            store.put(r)?;
        }
        Ok(store)
    }
}
