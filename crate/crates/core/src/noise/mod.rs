//! Standard-deviation-scaled parameter noise.
//!
//! For every selected tensor `W`:
//!
//! ```text
//! W' = W + u * std(W),   u ~ U[-lambda/2, lambda/2)   elementwise
//! ```
//!
//! With the `all` selector this is the global perturbation applied to every
//! parameter matrix; any other selector restricts it to the matching subset,
//! leaving the rest of the store bitwise untouched. `std` is the population
//! standard deviation of the flattened tensor, so the noise scale follows
//! each tensor's own spread.
//!
//! Noise is drawn from a per-tensor [`NoiseStream`] keyed by `(seed, name)`;
//! see [`rng`] for the exact generator.

pub mod rng;

pub use rng::{combine_seeds, derive_substream, NoiseStream};

use crate::selector::SelectorExpr;
use crate::store::{ParamStore, TensorRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("tensor `{name}`: perturbation produced a non-finite value at element {index}")]
    NonFiniteResult { name: String, index: usize },
    #[error("noise intensity must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// `U[-lambda/2, lambda/2)`.
    #[default]
    Uniform,
    /// Normal with standard deviation `lambda/2`, via Box-Muller.
    Gaussian,
}

impl std::str::FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Distribution::Uniform),
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            other => Err(format!("unknown distribution `{other}` (uniform|gaussian)")),
        }
    }
}

/// One perturbation request.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub lambda: f64,
    pub selector: SelectorExpr,
    pub seed: u64,
    pub distribution: Distribution,
}

impl NoiseSpec {
    pub fn uniform(lambda: f64, selector: SelectorExpr, seed: u64) -> Self {
        Self { lambda, selector, seed, distribution: Distribution::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorReport {
    pub name: String,
    pub elements: usize,
    /// Population std of the tensor before noise.
    pub sigma: f64,
    pub max_abs_delta: f64,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub lambda: f64,
    pub seed: u64,
    pub distribution: Distribution,
    pub selector: String,
    pub tensors: Vec<TensorReport>,
    pub tensors_touched: usize,
    pub elements_perturbed: usize,
}

/// Population standard deviation, accumulated in `f64`.
pub fn tensor_std(data: &[f32]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Fills `out` with noise multipliers (before scaling by sigma).
fn sample_into(out: &mut [f64], lambda: f64, rng: &mut NoiseStream, dist: Distribution) {
    match dist {
        Distribution::Uniform => {
            for u in out.iter_mut() {
                *u = lambda * (rng.next_f64() - 0.5);
            }
        }
        Distribution::Gaussian => {
            let scale = lambda / 2.0;
            for pair in out.chunks_mut(2) {
                let u1 = 1.0 - rng.next_f64();
                let u2 = rng.next_f64();
                let r = (-2.0 * u1.ln()).sqrt();
                let theta = std::f64::consts::TAU * u2;
                pair[0] = scale * r * theta.cos();
                if let Some(second) = pair.get_mut(1) {
                    *second = scale * r * theta.sin();
                }
            }
        }
    }
}

/// Perturbs a single tensor. Name, shape and metadata are preserved.
///
/// `lambda == 0` or a constant tensor returns the input bit for bit.
pub fn perturb_tensor(rec: &TensorRecord, lambda: f64, rng: &mut NoiseStream, dist: Distribution) -> Result<TensorRecord, NoiseError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(NoiseError::InvalidLambda(lambda));
    }
    let sigma = tensor_std(&rec.data);
    if lambda == 0.0 || sigma == 0.0 {
        return Ok(rec.clone());
    }
    let mut noise = vec![0.0f64; rec.data.len()];
    sample_into(&mut noise, lambda, rng, dist);
    let mut out = rec.clone();
    for (k, (w, u)) in out.data.iter_mut().zip(&noise).enumerate() {
        let v = (*w as f64 + u * sigma) as f32;
        if !v.is_finite() {
            return Err(NoiseError::NonFiniteResult { name: rec.name.clone(), index: k });
        }
        *w = v;
    }
    Ok(out)
}

fn summarize(before: &TensorRecord, after: &TensorRecord) -> TensorReport {
    let mut max_abs = 0.0f64;
    let mut sum = 0.0f64;
    for (a, b) in before.data.iter().zip(&after.data) {
        let d = *b as f64 - *a as f64;
        max_abs = max_abs.max(d.abs());
        sum += d;
    }
    TensorReport {
        name: before.name.clone(),
        elements: before.numel(),
        sigma: tensor_std(&before.data),
        max_abs_delta: max_abs,
        mean_delta: sum / before.numel() as f64,
    }
}

/// Applies `spec` to every matching record; the input store is not modified.
///
/// Tensors are processed in parallel. Each draws from its own substream, so
/// the result does not depend on scheduling or on store order.
pub fn apply_noise(store: &ParamStore, spec: &NoiseSpec) -> Result<(ParamStore, PerturbationReport), NoiseError> {
    if !(spec.lambda.is_finite() && spec.lambda >= 0.0) {
        return Err(NoiseError::InvalidLambda(spec.lambda));
    }
    let records: Vec<&TensorRecord> = store.iter().collect();
    let outcomes: Vec<Result<(TensorRecord, Option<TensorReport>), NoiseError>> = records
        .par_iter()
        .map(|rec| {
            if !spec.selector.matches(rec) {
                return Ok(((*rec).clone(), None));
            }
            let mut rng = derive_substream(spec.seed, &rec.name);
            let out = perturb_tensor(rec, spec.lambda, &mut rng, spec.distribution)?;
            let report = summarize(rec, &out);
            Ok((out, Some(report)))
        })
        .collect();

    let mut next = ParamStore::new();
    let mut report = PerturbationReport {
        lambda: spec.lambda,
        seed: spec.seed,
        distribution: spec.distribution,
        selector: spec.selector.to_string(),
        ..Default::default()
    };
    for outcome in outcomes {
        let (rec, tr) = outcome?;
        if let Some(tr) = tr {
            report.tensors_touched += 1;
            report.elements_perturbed += tr.elements;
            report.tensors.push(tr);
        }
        next.put(rec).expect("perturbed record keeps a valid name and shape");
    }
    Ok((next, report))
}

/// Applies several specs in order, e.g. one per layer zone.
pub fn apply_noise_all(store: &ParamStore, specs: &[NoiseSpec]) -> Result<(ParamStore, Vec<PerturbationReport>), NoiseError> {
    let mut cur = store.clone();
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let (next, rep) = apply_noise(&cur, spec)?;
        cur = next;
        reports.push(rep);
    }
    Ok((cur, reports))
}
