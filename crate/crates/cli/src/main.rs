use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use perturbkit::harness::{emit_results, init_thread_pool, markdown_table, run_experiment, ExperimentConfig};
use perturbkit::metrics::{relation_counts, RelationCounts, RelationInstance, RougeScores};
use perturbkit::noise::{apply_noise, tensor_std, Distribution, NoiseSpec};
use perturbkit::selector::{preset, SelectorExpr};
use perturbkit::store::{read_checkpoint, write_checkpoint, ParamStore, ZoneComponent};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Localized parameter-noise experiments on toy transformers.
#[derive(Parser)]
#[command(name = "perturbkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pre-train → perturb → fine-tune → evaluate sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add noise to a checkpoint.
    Perturb(PerturbArgs),
    /// Score predictions.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Print the records of a checkpoint.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Named selector (all, bias, weights, add_norm, encoder, decoder, layer_zone_low, layer_zone_high).
    #[arg(long, conflicts_with = "select", required_unless_present = "select")]
    preset: Option<String>,
    /// Selector expression, e.g. `kind:bias and layer:0..2`.
    #[arg(long)]
    select: Option<String>,
    /// Encoder depth for the layer-zone presets (default: read from the checkpoint).
    #[arg(long)]
    layers: Option<u32>,
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    /// Write a JSON perturbation report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Adjusted relation F1 over JSON relation files.
    Jnere {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// ROUGE over same-named text files in two directories.
    Rouge {
        #[arg(long)]
        cand: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

fn main() -> Result<()> {
    init_thread_pool();
    match Cli::parse().command {
        Command::Sweep { config, out } => sweep(&config, out),
        Command::Perturb(args) => perturb(args),
        Command::Eval(EvalCommand::Jnere { pred, gold }) => eval_jnere(&pred, &gold),
        Command::Eval(EvalCommand::Rouge { cand, reference }) => eval_rouge(&cand, &reference),
        Command::Inspect { ckpt } => inspect(&ckpt),
    }
}

fn sweep(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let Some(dir) = out.or_else(|| cfg.output.clone()) else {
        bail!("no output directory: pass --out or set `output` in the config");
    };
    let results = run_experiment(&cfg)?;
    emit_results(&results, &dir)?;
    print!("{}", markdown_table(&results));
    eprintln!("wrote results to {}", dir.display());
    Ok(())
}

/// One past the highest encoder layer index in the store.
fn encoder_depth(store: &ParamStore) -> u32 {
    store.iter().filter(|r| r.zone.component == ZoneComponent::Encoder).filter_map(|r| r.zone.layer).max().map_or(0, |l| l + 1)
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let store = read_checkpoint(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let selector: SelectorExpr = match (&a.preset, &a.select) {
        (Some(name), _) => preset(name, a.layers.unwrap_or_else(|| encoder_depth(&store)))?,
        (None, Some(text)) => text.parse()?,
        (None, None) => unreachable!("clap requires one of --preset / --select"),
    };
    let spec = NoiseSpec { lambda: a.lambda, selector, seed: a.seed, distribution: a.dist };
    let (noisy, report) = apply_noise(&store, &spec)?;
    write_checkpoint(&noisy, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("perturbed {} tensors ({} elements) with λ={}", report.tensors_touched, report.elements_perturbed, a.lambda);
    Ok(())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Sentences from either `{"relations": [...]}` or a list of such objects.
fn read_relations(path: &Path) -> Result<Vec<Vec<RelationInstance>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let one = |v: &Value| -> Result<Vec<RelationInstance>> {
        let rels = v.get("relations").with_context(|| format!("{}: missing `relations`", path.display()))?;
        serde_json::from_value(rels.clone()).with_context(|| format!("{}: bad relation", path.display()))
    };
    match &value {
        Value::Array(items) => items.iter().map(one).collect(),
        v => Ok(vec![one(v)?]),
    }
}

fn eval_jnere(pred: &Path, gold: &Path) -> Result<()> {
    let p = read_relations(pred)?;
    let g = read_relations(gold)?;
    if p.len() != g.len() {
        bail!("{} predicted sentences but {} gold sentences", p.len(), g.len());
    }
    if p.iter().chain(&g).flatten().any(|r| r.head.is_empty() || r.tail.is_empty()) {
        bail!("entity spans must contain at least one token");
    }
    let c: RelationCounts = p.iter().zip(&g).map(|(a, b)| relation_counts(a, b)).sum();
    let out = json!({
        "adjusted_f1": round6(c.f1()),
        "tp": round6(c.tp),
        "fp": round6(c.fp),
        "fn": round6(c.fn_),
        "sentences": p.len(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn eval_rouge(cand: &Path, reference: &Path) -> Result<()> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(reference)
        .with_context(|| format!("reading {}", reference.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no reference files in {}", reference.display());
    }
    let mut sum = RougeScores::default();
    for r in &names {
        let file = r.file_name().expect("listed files have names");
        let c = cand.join(file);
        let cand_text = std::fs::read_to_string(&c).with_context(|| format!("reading candidate {}", c.display()))?;
        let ref_text = std::fs::read_to_string(r).with_context(|| format!("reading {}", r.display()))?;
        let s = RougeScores::from_text(&cand_text, &ref_text);
        sum.rouge1 += s.rouge1;
        sum.rouge2 += s.rouge2;
        sum.rouge_l += s.rouge_l;
        sum.rouge_lsum += s.rouge_lsum;
    }
    let n = names.len() as f64;
    let mean = RougeScores { rouge1: sum.rouge1 / n, rouge2: sum.rouge2 / n, rouge_l: sum.rouge_l / n, rouge_lsum: sum.rouge_lsum / n };
    let out = json!({
        "rouge1": round6(mean.rouge1),
        "rouge2": round6(mean.rouge2),
        "rougeL": round6(mean.rouge_l),
        "rougeLsum": round6(mean.rouge_lsum),
        "rouge_average": round6(mean.average()),
        "files": names.len(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn inspect(ckpt: &Path) -> Result<()> {
    let store = read_checkpoint(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    println!("{:<36} {:<10} {:<10} {:<14} {:>10}", "name", "kind", "zone", "shape", "sigma");
    for r in &store {
        let zone = match r.zone.layer {
            Some(l) => format!("{}.{l}", r.zone.component.ident()),
            None => r.zone.component.ident().to_owned(),
        };
        println!("{:<36} {:<10} {:<10} {:<14} {:>10.6}", r.name, r.kind.ident(), zone, format!("{:?}", r.shape), tensor_std(&r.data));
    }
    println!("{} records, {} elements", store.len(), store.total_elements());
    Ok(())
}
