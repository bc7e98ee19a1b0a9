use super::params::Params;
use super::{ModelError, Result};
use crate::autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having a zero gradient.
pub fn adam_step(params: &mut Params, grads: &HashMap<String, Tensor>, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for (name, p) in params.iter() {
        if let Some(g) = grads.get(name) {
            if g.shape != p.value.shape {
                return Err(ModelError::Shape(format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape, p.value.shape)));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let n = p.value.numel();
        let m = state.m.entry(name.to_owned()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_owned()).or_insert_with(|| vec![0.0; n]);
        let g = grads.get(name).map(|g| g.data.as_slice());
        for i in 0..n {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.value.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut HashMap<String, Tensor>, max_norm: f64) -> f64 {
    // Sum in name order so the result does not depend on hash order.
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let norm = names.iter().map(|n| grads[*n].data.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

fn default_clip() -> Option<f64> {
    Some(1.0)
}

/// Mini-batch training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    /// Global gradient-norm cap; `null` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    /// Seeds the example shuffling.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 200, batch: 16, adam: AdamConfig::default(), clip_norm: default_clip(), seed: 0 }
    }
}

/// Shuffled epochs of example indices, cut into batches.
pub(crate) struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        assert!(n > 0 && batch > 0);
        let mut s = Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), pos: n, batch: batch.min(n) };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// Runs `cfg.steps` Adam updates; `loss_and_grads` evaluates one batch.
/// Returns the per-step losses.
pub(crate) fn train_loop<F>(params: &mut Params, n_examples: usize, cfg: &TrainConfig, mut loss_and_grads: F) -> Result<Vec<f64>>
where
    F: FnMut(&Params, &[usize]) -> Result<(f64, HashMap<String, Tensor>)>,
{
    if n_examples == 0 {
        return Err(ModelError::Shape("no training examples".into()));
    }
    let mut sampler = BatchSampler::new(n_examples, cfg.batch, cfg.seed);
    let mut state = AdamState::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let idx = sampler.next_batch();
        let (loss, mut grads) = loss_and_grads(params, &idx)?;
        if let Some(c) = cfg.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        adam_step(params, &grads, &mut state, &cfg.adam)?;
        losses.push(loss);
    }
    Ok(losses)
}
