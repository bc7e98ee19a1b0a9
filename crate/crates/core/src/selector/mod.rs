//! Boolean predicates over tensor metadata.
//!
//! A [`SelectorExpr`] decides which records of a store receive noise. The
//! textual form is:
//!
//! ```text
//! expr   := term ('or' term)*
//! term   := factor ('and' factor)*
//! factor := 'not' factor | '(' expr ')' | atom
//! atom   := 'kind:' IDENT | 'name:' GLOB | 'zone:' IDENT | 'layer:' INT '..' INT | 'all' | 'none'
//! ```
//!
//! Keywords and identifiers are case-insensitive; glob patterns are not.
//! `layer:lo..hi` is half-open. Globs are anchored, `*` matches any run of
//! characters (dots included) and `?` exactly one.

mod glob;
mod parse;

pub use glob::glob_match;
pub use parse::{parse_selector, ParseError};

use crate::store::{TensorKind, TensorRecord, ZoneComponent};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectorExpr {
    All,
    None,
    KindIs(TensorKind),
    NameGlob(String),
    ZoneIs(ZoneComponent),
    /// Layer index in `lo..hi`; records without a layer index never match.
    LayerIn(u32, u32),
    Not(Box<SelectorExpr>),
    And(Box<SelectorExpr>, Box<SelectorExpr>),
    Or(Box<SelectorExpr>, Box<SelectorExpr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectorError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown preset `{0}` (expected one of {PRESETS:?})")]
    UnknownPreset(String),
    #[error("preset `{name}` needs at least 2 encoder layers, got {layers}")]
    TooFewLayers { name: String, layers: u32 },
}

impl SelectorExpr {
    pub fn negate(e: SelectorExpr) -> Self {
        SelectorExpr::Not(Box::new(e))
    }

    pub fn and(a: SelectorExpr, b: SelectorExpr) -> Self {
        SelectorExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: SelectorExpr, b: SelectorExpr) -> Self {
        SelectorExpr::Or(Box::new(a), Box::new(b))
    }

    /// Evaluates the predicate. Looks only at name, kind and zone.
    pub fn matches(&self, rec: &TensorRecord) -> bool {
        match self {
            SelectorExpr::All => true,
            SelectorExpr::None => false,
            SelectorExpr::KindIs(k) => rec.kind == *k,
            SelectorExpr::NameGlob(p) => glob_match(p, &rec.name),
            SelectorExpr::ZoneIs(z) => rec.zone.component == *z,
            SelectorExpr::LayerIn(lo, hi) => rec.zone.layer.is_some_and(|l| *lo <= l && l < *hi),
            SelectorExpr::Not(e) => !e.matches(rec),
            SelectorExpr::And(a, b) => a.matches(rec) && b.matches(rec),
            SelectorExpr::Or(a, b) => a.matches(rec) || b.matches(rec),
        }
    }
}

impl std::str::FromStr for SelectorExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse_selector(s)
    }
}

/// Prints in the grammar accepted by [`parse_selector`], fully parenthesized.
impl fmt::Display for SelectorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectorExpr::All => f.write_str("all"),
            SelectorExpr::None => f.write_str("none"),
            SelectorExpr::KindIs(k) => write!(f, "kind:{k}"),
            SelectorExpr::NameGlob(p) => write!(f, "name:{p}"),
            SelectorExpr::ZoneIs(z) => write!(f, "zone:{z}"),
            SelectorExpr::LayerIn(lo, hi) => write!(f, "layer:{lo}..{hi}"),
            SelectorExpr::Not(e) => write!(f, "not ({e})"),
            SelectorExpr::And(a, b) => write!(f, "({a}) and ({b})"),
            SelectorExpr::Or(a, b) => write!(f, "({a}) or ({b})"),
        }
    }
}

pub const PRESETS: [&str; 8] = ["all", "bias", "weights", "add_norm", "layer_zone_low", "layer_zone_high", "encoder", "decoder"];

/// Named selectors for the noise locations compared in the experiments.
///
/// `encoder_layers` is only consulted by the two layer-zone presets, which
/// split layers at `encoder_layers / 2`.
pub fn preset(name: &str, encoder_layers: u32) -> Result<SelectorExpr, SelectorError> {
    use SelectorExpr as S;
    let half = encoder_layers / 2;
    let zone_check = || {
        if encoder_layers < 2 {
            Err(SelectorError::TooFewLayers { name: name.to_owned(), layers: encoder_layers })
        } else {
            Ok(())
        }
    };
    Ok(match name.to_ascii_lowercase().as_str() {
        "all" => S::All,
        "bias" => S::KindIs(TensorKind::Bias),
        "weights" => S::KindIs(TensorKind::Weight),
        "add_norm" => S::or(S::KindIs(TensorKind::LayerNormGain), S::KindIs(TensorKind::LayerNormBias)),
        "layer_zone_low" => {
            zone_check()?;
            S::LayerIn(0, half)
        }
        "layer_zone_high" => {
            zone_check()?;
            S::LayerIn(half, encoder_layers)
        }
        "encoder" => S::ZoneIs(ZoneComponent::Encoder),
        "decoder" => S::ZoneIs(ZoneComponent::Decoder),
        _ => return Err(SelectorError::UnknownPreset(name.to_owned())),
    })
}
