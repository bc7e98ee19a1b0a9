//! Pre-train → perturb → fine-tune → evaluate sweeps over noise locations,
//! intensities and seeds.
//!
//! A sweep pre-trains one toy model on the source task, then for every
//! `(location, λ, seed)` applies noise to a copy of the checkpoint, fine-tunes
//! it on the shifted target task and scores it on held-out target data
//! (adjusted relation F1 for tagging, ROUGE-Average for summarization).
//! Runs are independent and execute in parallel; results are sorted before
//! they are written, so output bytes never depend on scheduling.

mod data;
mod report;

pub use data::{
    gen_seq2seq_data, gen_tagging_data, seq2seq_vocab, split_sentences, tagging_vocab, TaskShift, MARK, SEP, SEQ2SEQ_MAX_SOURCE, SEQ2SEQ_MAX_TARGET,
    TAGGING_MAX_LEN,
};
pub use report::{emit_results, markdown_table, results_csv, results_json};

use crate::metrics::{relation_counts, RelationCounts, RougeScores};
use crate::models::{ModelConfig, ModelError, Seq2SeqExample, Seq2SeqModel, TaggerModel, TaggingExample, TrainConfig};
use crate::noise::{apply_noise_all, combine_seeds, Distribution, NoiseError, NoiseSpec};
use crate::selector::{preset, SelectorError, SelectorExpr, PRESETS};
use crate::store::ParamStore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset size must be at least 1")]
    EmptyDataset,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("location `{location}`: {source}")]
    Selector { location: String, source: SelectorError },
    #[error("location `{location}`: cannot parse selector: {source}")]
    SelectorParse { location: String, source: crate::selector::ParseError },
    #[error("pre-training: {0}")]
    Pretrain(ModelError),
    #[error("run ({location}, λ={lambda}, seed={seed}): {source}")]
    Run { location: String, lambda: f64, seed: u64, source: Box<RunFailure> },
    #[error("no results to emit")]
    NoResults,
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// What went wrong inside a single run.
#[derive(Debug, thiserror::Error)]
pub enum RunFailure {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tagging,
    Seq2seq,
}

/// One noise location with its λ grid.
///
/// `location` is `none`, a preset name, `layer_zones`, or selector text.
/// `layer_zones` perturbs the low and high encoder-layer halves; each entry
/// of `lambdas` applies to both halves, each `zone_lambdas` pair gives
/// `[low, high]` separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSpec {
    pub location: String,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zone_lambdas: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Pre-training examples (source task).
    pub pretrain_size: usize,
    /// Fine-tuning examples (target task).
    pub finetune_size: usize,
    /// Held-out target-task examples for evaluation.
    pub eval_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub shift: TaskShift,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Identifier carried into every result row.
    pub id: String,
    pub task: Task,
    pub model: ModelConfig,
    /// Seeds the model initialization.
    #[serde(default)]
    pub model_seed: u64,
    pub locations: Vec<LocationSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Combined with each run seed to derive the noise seed.
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub distribution: Distribution,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub dataset: DatasetConfig,
    /// Greedy decoding budget for summarization evaluation.
    #[serde(default = "default_decode_steps")]
    pub decode_steps: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Fill the `seconds` column with wall-clock times. Off by default so
    /// repeated sweeps produce identical files.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_decode_steps() -> usize {
    SEQ2SEQ_MAX_TARGET
}

/// A single run's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metric: f64,
    /// Target-task evaluation loss after noise, before fine-tuning.
    pub pre_finetune_loss: f64,
    pub seconds: f64,
}

/// Aggregate over seeds for one `(location, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_id: String,
    pub location: String,
    pub lambda: f64,
    /// `adjusted_f1` or `rouge_average`.
    pub metric: String,
    pub runs: Vec<SeedRun>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub seconds: f64,
}

impl RunResult {
    fn aggregate(config_id: &str, location: String, lambda: f64, metric: &str, mut runs: Vec<SeedRun>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let n = runs.len() as f64;
        let mean = runs.iter().map(|r| r.metric).sum::<f64>() / n;
        let std = (runs.iter().map(|r| (r.metric - mean).powi(2)).sum::<f64>() / n).sqrt();
        let seconds = runs.iter().map(|r| r.seconds).sum();
        RunResult { config_id: config_id.to_owned(), location, lambda, metric: metric.to_owned(), runs, mean, std, seconds }
    }
}

/// A fully resolved run: label for the table plus the noise to apply.
#[derive(Debug, Clone)]
struct Planned {
    location: String,
    lambda: f64,
    seed: u64,
    /// `(selector, λ)` pairs applied in order.
    noise: Vec<(SelectorExpr, f64)>,
}

/// Table label, λ column and noise of one grid cell.
type Cell = (String, f64, Vec<(SelectorExpr, f64)>);

fn resolve_selector(location: &str, layers: u32) -> Result<SelectorExpr, HarnessError> {
    let lower = location.to_ascii_lowercase();
    if lower == "none" {
        return Ok(SelectorExpr::None);
    }
    if PRESETS.contains(&lower.as_str()) {
        return preset(&lower, layers).map_err(|source| HarnessError::Selector { location: location.to_owned(), source });
    }
    location.parse().map_err(|source| HarnessError::SelectorParse { location: location.to_owned(), source })
}

fn fmt_lambda(l: f64) -> String {
    format!("{l:.6}")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return bad("seeds must be pairwise distinct".into());
        }
        for loc in &self.locations {
            let all = loc.lambdas.iter().chain(loc.zone_lambdas.iter().flatten());
            if let Some(l) = all.clone().find(|l| !(l.is_finite() && **l >= 0.0)) {
                return bad(format!("location {}: λ must be finite and >= 0, got {l}", loc.location));
            }
            if loc.lambdas.is_empty() && loc.zone_lambdas.is_empty() {
                return bad(format!("location {} has no λ values", loc.location));
            }
            if !loc.zone_lambdas.is_empty() && loc.location != "layer_zones" {
                return bad(format!("zone_lambdas only apply to layer_zones, not {}", loc.location));
            }
        }
        if self.dataset.pretrain_size == 0 || self.dataset.finetune_size == 0 || self.dataset.eval_size == 0 {
            return Err(HarnessError::EmptyDataset);
        }
        if self.pretrain.batch == 0 || self.finetune.batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        let (vocab, len) = match self.task {
            Task::Tagging => (tagging_vocab(&self.dataset.shift), TAGGING_MAX_LEN),
            Task::Seq2seq => (seq2seq_vocab(&self.dataset.shift), SEQ2SEQ_MAX_SOURCE.max(SEQ2SEQ_MAX_TARGET)),
        };
        if self.model.vocab < vocab || self.model.max_len < len {
            return bad(format!("model needs vocab >= {vocab} and max_len >= {len} for this task"));
        }
        self.model.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        if self.task == Task::Seq2seq && self.model.decoder_layers == 0 {
            return bad("seq2seq needs decoder_layers >= 1".into());
        }
        Ok(())
    }

    /// Every run in the sweep; the `("none", 0)` baseline is always included.
    fn plan(&self) -> Result<Vec<Planned>, HarnessError> {
        let layers = self.model.layers as u32;
        let mut cells: Vec<Cell> = Vec::new();
        for loc in &self.locations {
            if loc.location == "layer_zones" {
                let low = resolve_selector("layer_zone_low", layers)?;
                let high = resolve_selector("layer_zone_high", layers)?;
                for &l in &loc.lambdas {
                    cells.push((loc.location.clone(), l, vec![(low.clone(), l), (high.clone(), l)]));
                }
                for &[lo, hi] in &loc.zone_lambdas {
                    let label = format!("layer_zones(low={})", fmt_lambda(lo));
                    cells.push((label, hi, vec![(low.clone(), lo), (high.clone(), hi)]));
                }
            } else {
                let sel = resolve_selector(&loc.location, layers)?;
                for &l in &loc.lambdas {
                    cells.push((loc.location.clone(), l, vec![(sel.clone(), l)]));
                }
            }
        }
        if !cells.iter().any(|(loc, l, _)| loc == "none" && *l == 0.0) {
            cells.insert(0, ("none".into(), 0.0, vec![(SelectorExpr::None, 0.0)]));
        }
        // Drop repeated cells so each aggregate holds exactly |seeds| runs.
        let mut seen = std::collections::HashSet::new();
        cells.retain(|(loc, l, _)| seen.insert((loc.clone(), l.to_bits())));
        Ok(cells
            .into_iter()
            .flat_map(|(location, lambda, noise)| {
                self.seeds.iter().map(move |&seed| Planned { location: location.clone(), lambda, seed, noise: noise.clone() })
            })
            .collect())
    }

    fn noise_specs(&self, run: &Planned) -> Vec<NoiseSpec> {
        let seed = combine_seeds(self.noise_seed, run.seed);
        run.noise
            .iter()
            .enumerate()
            .map(|(i, (sel, l))| NoiseSpec {
                lambda: *l,
                selector: sel.clone(),
                // separate streams when two zones are perturbed in one run
                seed: if i == 0 { seed } else { combine_seeds(seed, i as u64) },
                distribution: self.distribution,
            })
            .collect()
    }

    fn finetune_for(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed: combine_seeds(self.finetune.seed, seed), ..self.finetune.clone() }
    }
}

/// Datasets for one sweep.
enum Datasets {
    Tagging { pretrain: Vec<TaggingExample>, finetune: Vec<TaggingExample>, eval: Vec<TaggingExample> },
    Seq2seq { pretrain: Vec<Seq2SeqExample>, finetune: Vec<Seq2SeqExample>, eval: Vec<Seq2SeqExample> },
}

impl Datasets {
    fn generate(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let d = &cfg.dataset;
        // Distinct generator streams for the three splits.
        let seeds = [combine_seeds(d.seed, 1), combine_seeds(d.seed, 2), combine_seeds(d.seed, 3)];
        Ok(match cfg.task {
            Task::Tagging => Datasets::Tagging {
                pretrain: gen_tagging_data(seeds[0], d.pretrain_size, &TaskShift::NONE)?,
                finetune: gen_tagging_data(seeds[1], d.finetune_size, &d.shift)?,
                eval: gen_tagging_data(seeds[2], d.eval_size, &d.shift)?,
            },
            Task::Seq2seq => Datasets::Seq2seq {
                pretrain: gen_seq2seq_data(seeds[0], d.pretrain_size, &TaskShift::NONE)?,
                finetune: gen_seq2seq_data(seeds[1], d.finetune_size, &d.shift)?,
                eval: gen_seq2seq_data(seeds[2], d.eval_size, &d.shift)?,
            },
        })
    }
}

const EVAL_BATCH: usize = 32;

/// Micro-averaged adjusted F1 of a tagger on labeled sentences.
pub fn evaluate_tagger(model: &TaggerModel, data: &[TaggingExample]) -> Result<f64, ModelError> {
    let mut counts = RelationCounts::default();
    for chunk in data.chunks(EVAL_BATCH) {
        let tokens = crate::models::pad_batch(chunk.iter().map(|e| e.tokens.as_slice()));
        let preds = model.predict(&tokens)?;
        for (ex, pred) in chunk.iter().zip(&preds) {
            counts += relation_counts(pred, &ex.relations);
        }
    }
    Ok(counts.f1())
}

/// Mean ROUGE scores of greedy outputs against targets, split on `SEP`.
pub fn evaluate_seq2seq(model: &Seq2SeqModel, data: &[Seq2SeqExample], max_steps: usize) -> Result<RougeScores, ModelError> {
    let mut sum = RougeScores::default();
    for chunk in data.chunks(EVAL_BATCH) {
        let srcs: Vec<Vec<usize>> = chunk.iter().map(|e| e.source.clone()).collect();
        let outs = model.greedy_decode_batch(&srcs, max_steps)?;
        for (ex, out) in chunk.iter().zip(&outs) {
            let s = RougeScores::from_sentences(&split_sentences(out), &split_sentences(&ex.target));
            sum.rouge1 += s.rouge1;
            sum.rouge2 += s.rouge2;
            sum.rouge_l += s.rouge_l;
            sum.rouge_lsum += s.rouge_lsum;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(RougeScores { rouge1: sum.rouge1 / n, rouge2: sum.rouge2 / n, rouge_l: sum.rouge_l / n, rouge_lsum: sum.rouge_lsum / n })
}

/// A pre-trained checkpoint plus the data it came with.
pub struct Pretrained {
    datasets: Datasets,
    pub store: ParamStore,
    pub pretrain_losses: Vec<f64>,
}

/// Trains the toy model on the source task and returns its 32-bit checkpoint.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<Pretrained, HarnessError> {
    cfg.validate()?;
    let datasets = Datasets::generate(cfg)?;
    let (store, pretrain_losses) = match &datasets {
        Datasets::Tagging { pretrain, .. } => {
            let mut m = TaggerModel::new(cfg.model.clone(), cfg.model_seed).map_err(HarnessError::Pretrain)?;
            let losses = m.train(pretrain, &cfg.pretrain).map_err(HarnessError::Pretrain)?;
            (m.params.to_store(), losses)
        }
        Datasets::Seq2seq { pretrain, .. } => {
            let mut m = Seq2SeqModel::new(cfg.model.clone(), cfg.model_seed).map_err(HarnessError::Pretrain)?;
            let losses = m.train(pretrain, &cfg.pretrain).map_err(HarnessError::Pretrain)?;
            (m.params.to_store(), losses)
        }
    };
    Ok(Pretrained { datasets, store, pretrain_losses })
}

fn execute(cfg: &ExperimentConfig, pre: &Pretrained, run: &Planned) -> Result<SeedRun, RunFailure> {
    let start = Instant::now();
    let (noisy, _) = apply_noise_all(&pre.store, &cfg.noise_specs(run))?;
    let train = cfg.finetune_for(run.seed);
    let (metric, pre_finetune_loss) = match &pre.datasets {
        Datasets::Tagging { finetune, eval, .. } => {
            let mut m = TaggerModel::from_store(cfg.model.clone(), &noisy)?;
            let before = m.eval_loss(eval, EVAL_BATCH)?;
            m.train(finetune, &train)?;
            (evaluate_tagger(&m, eval)?, before)
        }
        Datasets::Seq2seq { finetune, eval, .. } => {
            let mut m = Seq2SeqModel::from_store(cfg.model.clone(), &noisy)?;
            let before = m.eval_loss(eval, EVAL_BATCH)?;
            m.train(finetune, &train)?;
            (evaluate_seq2seq(&m, eval, cfg.decode_steps)?.average(), before)
        }
    };
    let seconds = if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
    Ok(SeedRun { seed: run.seed, metric, pre_finetune_loss, seconds })
}

/// Runs every `(location, λ, seed)` of the config from an existing
/// pre-trained checkpoint.
pub fn run_sweep(cfg: &ExperimentConfig, pre: &Pretrained) -> Result<Vec<RunResult>, HarnessError> {
    let plan = cfg.plan()?;
    let outcomes: Vec<Result<SeedRun, HarnessError>> = plan
        .par_iter()
        .map(|run| {
            execute(cfg, pre, run).map_err(|e| HarnessError::Run {
                location: run.location.clone(),
                lambda: run.lambda,
                seed: run.seed,
                source: Box::new(e),
            })
        })
        .collect();
    let metric = match cfg.task {
        Task::Tagging => "adjusted_f1",
        Task::Seq2seq => "rouge_average",
    };
    let mut results: Vec<RunResult> = Vec::new();
    let mut current: Vec<SeedRun> = Vec::new();
    for (i, (run, outcome)) in plan.iter().zip(outcomes).enumerate() {
        current.push(outcome?);
        let last_of_cell = plan.get(i + 1).is_none_or(|n| n.location != run.location || n.lambda.to_bits() != run.lambda.to_bits());
        if last_of_cell {
            results.push(RunResult::aggregate(&cfg.id, run.location.clone(), run.lambda, metric, std::mem::take(&mut current)));
        }
    }
    sort_results(&mut results);
    Ok(results)
}

/// Pre-trains, then sweeps.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>, HarnessError> {
    let pre = pretrain(cfg)?;
    run_sweep(cfg, &pre)
}

pub(crate) fn sort_results(results: &mut [RunResult]) {
    results.sort_by(|a, b| a.location.cmp(&b.location).then(a.lambda.total_cmp(&b.lambda)));
}

/// Target-task evaluation loss before fine-tuning, per seed, with λ applied to
/// every tensor. Used to confirm that heavy noise measurably damages the model.
pub fn pre_finetune_losses(cfg: &ExperimentConfig, pre: &Pretrained, lambda: f64) -> Result<Vec<(u64, f64)>, HarnessError> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let run = Planned { location: "all".into(), lambda, seed, noise: vec![(SelectorExpr::All, lambda)] };
            let wrap = |e: RunFailure| HarnessError::Run { location: "all".into(), lambda, seed, source: Box::new(e) };
            let (noisy, _) = apply_noise_all(&pre.store, &cfg.noise_specs(&run)).map_err(|e| wrap(e.into()))?;
            let loss = match &pre.datasets {
                Datasets::Tagging { eval, .. } => TaggerModel::from_store(cfg.model.clone(), &noisy).and_then(|m| m.eval_loss(eval, EVAL_BATCH)),
                Datasets::Seq2seq { eval, .. } => Seq2SeqModel::from_store(cfg.model.clone(), &noisy).and_then(|m| m.eval_loss(eval, EVAL_BATCH)),
            };
            Ok((seed, loss.map_err(|e| wrap(e.into()))?))
        })
        .collect()
}

/// Builds the global rayon pool, capped by `PERTURBKIT_THREADS` if set.
/// Returns the thread count in use. Safe to call more than once.
pub fn init_thread_pool() -> usize {
    let cap = std::env::var("PERTURBKIT_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    if let Some(n) = cap {
        // Fails only if the pool already exists; then the existing one stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}
