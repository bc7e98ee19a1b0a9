use super::{ModelError, Result};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::store::{ParamStore, TensorKind, TensorRecord, ZoneTag};
use indexmap::IndexMap;
use rand::Rng;
use std::collections::HashMap;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub kind: TensorKind,
    pub zone: ZoneTag,
    pub value: Tensor,
}

/// Named `f64` model parameters with the kind/zone tags they carry into a
/// [`ParamStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    entries: IndexMap<String, Param>,
}

/// Truncated normal: resample anything beyond two standard deviations.
fn trunc_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        // Box-Muller; `1 - u` keeps the log argument in (0, 1].
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: TensorKind, zone: ZoneTag, value: Tensor) {
        let name = name.into();
        assert!(!self.entries.contains_key(&name), "duplicate parameter {name}");
        self.entries.insert(name, Param { kind, zone, value });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Sets every parameter to zero (useful for symmetry checks).
    pub fn zero_all(&mut self) {
        for p in self.entries.values_mut() {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn add_random<R: Rng>(&mut self, name: &str, kind: TensorKind, zone: ZoneTag, shape: &[usize], rng: &mut R) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| trunc_normal(rng, INIT_STD)).collect();
        self.insert(name, kind, zone, Tensor::new(shape.to_vec(), data));
    }

    /// `{prefix}.weight` `[d_in, d_out]` and `{prefix}.bias` `[d_out]`.
    pub(crate) fn add_linear<R: Rng>(&mut self, prefix: &str, d_in: usize, d_out: usize, zone: ZoneTag, rng: &mut R) {
        self.add_random(&format!("{prefix}.weight"), TensorKind::Weight, zone, &[d_in, d_out], rng);
        self.insert(format!("{prefix}.bias"), TensorKind::Bias, zone, Tensor::zeros(&[d_out]));
    }

    /// `{prefix}.gain` (ones) and `{prefix}.bias` (zeros).
    pub(crate) fn add_layer_norm(&mut self, prefix: &str, d: usize, zone: ZoneTag) {
        self.insert(format!("{prefix}.gain"), TensorKind::LayerNormGain, zone, Tensor::full(&[d], 1.0));
        self.insert(format!("{prefix}.bias"), TensorKind::LayerNormBias, zone, Tensor::zeros(&[d]));
    }

    /// Serializes to 32-bit records, keeping order, kind and zone.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, p) in &self.entries {
            let rec = TensorRecord::new(name.clone(), p.value.shape.clone(), p.value.to_f32(), p.kind, p.zone);
            store.put(rec).expect("parameters are uniquely named and finite");
        }
        store
    }

    /// Loads values from a store laid out like `self`; names, shapes, kinds
    /// and zones must all agree.
    pub fn load_store(&mut self, store: &ParamStore) -> Result<()> {
        if store.len() != self.entries.len() {
            return Err(ModelError::Layout(format!("store has {} records, model has {}", store.len(), self.entries.len())));
        }
        for (name, p) in self.entries.iter_mut() {
            let rec = store.get(name).ok_or_else(|| ModelError::Layout(format!("missing record {name}")))?;
            if rec.shape != p.value.shape || rec.kind != p.kind || rec.zone != p.zone {
                return Err(ModelError::Layout(format!(
                    "record {name}: {:?}/{:?}/{:?}, expected {:?}/{:?}/{:?}",
                    rec.shape, rec.kind, rec.zone, p.value.shape, p.kind, p.zone
                )));
            }
            p.value.data = rec.data.iter().map(|&v| v as f64).collect();
        }
        Ok(())
    }
}

/// A graph plus lazily bound parameter leaves.
pub(crate) struct Binder<'a> {
    pub g: Graph,
    params: &'a Params,
    bound: HashMap<&'a str, NodeId>,
}

impl<'a> Binder<'a> {
    pub fn new(params: &'a Params) -> Self {
        Self { g: Graph::new(), params, bound: HashMap::new() }
    }

    pub fn p(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let (key, param) = self.params.entries.get_key_value(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        let id = self.g.param(key.clone(), param.value.clone());
        self.bound.insert(key.as_str(), id);
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_bounded_and_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<f64> = (0..20_000).map(|_| trunc_normal(&mut rng, INIT_STD)).collect();
        assert!(xs.iter().all(|x| x.abs() <= 2.0 * INIT_STD));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn store_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Params::new();
        p.add_linear("enc.0.ffn.up", 3, 4, ZoneTag::encoder(0), &mut rng);
        p.add_layer_norm("enc.0.ln1", 4, ZoneTag::encoder(0));
        let store = p.to_store();
        assert_eq!(store.names().collect::<Vec<_>>(), ["enc.0.ffn.up.weight", "enc.0.ffn.up.bias", "enc.0.ln1.gain", "enc.0.ln1.bias"]);
        let mut q = p.clone();
        q.zero_all();
        q.load_store(&store).unwrap();
        for ((_, a), (_, b)) in p.iter().zip(q.iter()) {
            for (x, y) in a.value.data.iter().zip(&b.value.data) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn load_rejects_wrong_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Params::new();
        p.add_linear("head.tag", 3, 4, ZoneTag::head(), &mut rng);
        let mut other = Params::new();
        other.add_linear("head.tag", 4, 4, ZoneTag::head(), &mut rng);
        assert!(matches!(p.load_store(&other.to_store()), Err(ModelError::Layout(_))));
    }
}
