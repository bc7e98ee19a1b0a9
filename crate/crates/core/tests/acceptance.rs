//! Acceptance checks, one line per criterion. Runs with a custom harness so
//! the PASS/FAIL lines show up in plain `cargo test` output.

mod common;

use common::{changed_names, fixture, model_stores};
use perturbkit::autodiff::{Graph, NodeId, Tensor};
use perturbkit::harness::{
    emit_results, evaluate_seq2seq, gen_seq2seq_data, markdown_table, pre_finetune_losses, pretrain, run_experiment, run_sweep, seq2seq_vocab,
    ExperimentConfig, RunResult, TaskShift, SEQ2SEQ_MAX_SOURCE, SEQ2SEQ_MAX_TARGET,
};
use perturbkit::metrics::{adjusted_f1, relation_counts, rouge_l, rouge_n, tokenize, EntitySpan, RelationInstance, RougeScores};
use perturbkit::models::{AdamConfig, ModelConfig, Seq2SeqModel, TaggerModel, TaggingExample, TrainConfig};
use perturbkit::noise::{apply_noise, tensor_std, NoiseSpec};
use perturbkit::selector::{preset, SelectorExpr};
use perturbkit::store::{read_checkpoint, read_checkpoint_bytes, write_checkpoint_bytes, ParamStore, StoreError, TensorRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::path::PathBuf;
use std::time::Instant;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let checks: [Check; 7] = [
        ("noise statistics", noise_statistics),
        ("localization", localization),
        ("gradient correctness", gradient_correctness),
        ("metrics oracles", metrics_oracles),
        ("checkpoint format", checkpoint_format),
        ("protocol + determinism", protocol_and_determinism),
        ("seq2seq sanity", seq2seq_sanity),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn standard_normal(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (u1, u2): (f64, f64) = (1.0 - rng.gen::<f64>(), rng.gen());
            ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
        })
        .collect()
}

/// One-sample KS distance against uniform[lo, hi).
fn ks_uniform(mut z: Vec<f64>, lo: f64, hi: f64) -> f64 {
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let cdf = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        d.max((cdf - i as f64 / n).abs()).max(((i + 1) as f64 / n - cdf).abs())
    })
}

fn noise_statistics() -> Outcome {
    let n = 1_000_000;
    let data = standard_normal(n, 11);
    let store = ParamStore::new().with(TensorRecord::inferred("enc.0.big.weight", vec![n], data.clone())).unwrap();
    let start = Instant::now();
    let (out, _) = apply_noise(&store, &NoiseSpec::uniform(0.8, SelectorExpr::All, 2024)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let sigma = tensor_std(&data);
    let z: Vec<f64> = out.get("enc.0.big.weight").unwrap().data.iter().zip(&data).map(|(&a, &b)| (a as f64 - b as f64) / sigma).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let ks = ks_uniform(z, -0.4, 0.4);
    ensure(ks < 0.01, || format!("KS {ks:.5} >= 0.01"))?;
    ensure(mean.abs() < 0.0016, || format!("mean {mean:.6} outside ±0.0016"))?;
    ensure(secs < 2.0, || format!("perturbation took {secs:.3}s"))?;
    Ok(format!("KS {ks:.5}, mean {mean:+.6}, {secs:.3}s"))
}

fn localization() -> Outcome {
    let presets = ["bias", "weights", "add_norm", "encoder", "decoder", "layer_zone_low", "layer_zone_high"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for (model, init) in model_stores() {
        // random values everywhere, so every matched tensor has σ > 0
        let mut store = ParamStore::new();
        for r in &init {
            let data = r.data.iter().map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            store.put(TensorRecord::new(r.name.clone(), r.shape.clone(), data, r.kind, r.zone)).unwrap();
        }
        let mut flat = ParamStore::new();
        for r in &init {
            flat.put(TensorRecord::new(r.name.clone(), r.shape.clone(), vec![0.37; r.numel()], r.kind, r.zone)).unwrap();
        }
        for name in presets {
            let sel = preset(name, 4).unwrap();
            let expect: Vec<String> = store.iter().filter(|r| sel.matches(r)).map(|r| r.name.clone()).collect();
            // the encoder-only tagger has nothing in the decoder zone
            let may_be_empty = model == "tagger" && name == "decoder";
            ensure(may_be_empty || !expect.is_empty(), || format!("{model}/{name}: empty match set"))?;
            let (out, _) = apply_noise(&store, &NoiseSpec::uniform(0.41, sel.clone(), 17)).unwrap();
            let changed = changed_names(&store, &out);
            ensure(changed == expect, || format!("{model}/{name}: changed {changed:?}, matched {expect:?}"))?;
            let (same, _) = apply_noise(&store, &NoiseSpec::uniform(0.0, sel.clone(), 17)).unwrap();
            ensure(write_checkpoint_bytes(&same) == write_checkpoint_bytes(&store), || format!("{model}/{name}: λ=0 changed bytes"))?;
            let (flat_out, _) = apply_noise(&flat, &NoiseSpec::uniform(3.0, sel, 17)).unwrap();
            ensure(write_checkpoint_bytes(&flat_out) == write_checkpoint_bytes(&flat), || format!("{model}/{name}: σ=0 changed bytes"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} preset/model pairs exact; λ=0 and σ=0 bitwise identical"))
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst central-difference relative error of a scalar graph function.
fn op_error(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.var(t.clone())).collect();
        let out = f(&mut g, &ids);
        (g, ids, out)
    };
    let (g, ids, out) = eval(&inputs);
    let grads = g.backward(out).unwrap();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[k].data[j] += eps;
            let mut minus = inputs.clone();
            minus[k].data[j] -= eps;
            let (gp, _, op) = eval(&plus);
            let (gm, _, om) = eval(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * eps);
            worst = worst.max(rel_err(grads.get(ids[k]).unwrap().data[j], numeric));
        }
    }
    worst
}

fn project(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(x).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape));
    let p = g.mul(x, w);
    g.sum(p)
}

fn op_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = |rng: &mut ChaCha8Rng, s: &[usize]| rand_tensor(rng, s);
    let x = t(&mut rng, &[2, 3, 5]);
    let unary = |f: fn(&mut Graph, NodeId) -> NodeId| {
        op_error(vec![x.clone()], move |g, v| {
            let y = f(g, v[0]);
            project(g, y, 20)
        })
    };
    vec![
        (
            "matmul",
            op_error(vec![t(&mut rng, &[2, 3, 4]), t(&mut rng, &[4, 5])], |g, v| {
                let y = g.matmul(v[0], v[1]);
                project(g, y, 10)
            }),
        ),
        (
            "matmul_batched",
            op_error(vec![t(&mut rng, &[2, 3, 4]), t(&mut rng, &[2, 4, 2])], |g, v| {
                let y = g.matmul(v[0], v[1]);
                project(g, y, 11)
            }),
        ),
        (
            "add",
            op_error(vec![t(&mut rng, &[3, 4]), t(&mut rng, &[4])], |g, v| {
                let y = g.add(v[0], v[1]);
                project(g, y, 12)
            }),
        ),
        (
            "mul",
            op_error(vec![t(&mut rng, &[3, 4]), t(&mut rng, &[4])], |g, v| {
                let y = g.mul(v[0], v[1]);
                project(g, y, 13)
            }),
        ),
        ("softmax", unary(|g, v| g.softmax(v))),
        ("layer_norm", unary(|g, v| g.layer_norm(v))),
        ("gelu", unary(|g, v| g.gelu(v))),
        ("transpose", unary(|g, v| g.transpose(v))),
        ("scale", unary(|g, v| g.scale(v, -1.7))),
        ("reshape", unary(|g, v| g.reshape(v, &[6, 5]))),
        ("slice", unary(|g, v| g.slice(v, 1, 4))),
        ("sum", op_error(vec![x.clone()], |g, v| g.sum(v[0]))),
        (
            "concat",
            op_error(vec![t(&mut rng, &[3, 2]), t(&mut rng, &[3, 4])], |g, v| {
                let y = g.concat(&[v[0], v[1], v[0]]);
                project(g, y, 30)
            }),
        ),
        (
            "embed",
            op_error(vec![t(&mut rng, &[5, 3])], |g, v| {
                let y = g.embed(v[0], &[4, 0, 4, 2]);
                project(g, y, 31)
            }),
        ),
        ("cross_entropy", op_error(vec![t(&mut rng, &[4, 6])], |g, v| g.cross_entropy(v[0], &[Some(1), None, Some(5), Some(1)]))),
    ]
}

fn tagger_error() -> f64 {
    let cfg = ModelConfig { layers: 2, model_dim: 16, heads: 2, vocab: 20, max_len: 8, decoder_layers: 0 };
    let mut m = TaggerModel::new(cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // larger than init scale so the check is not dominated by near-zero gradients
    for (_, p) in m.params.iter_mut() {
        for v in p.value.data.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let kpi = EntitySpan::new([1, 2], "kpi");
    let cy = EntitySpan::new([4], "cy");
    let py = EntitySpan::new([5], "py");
    let ex = TaggingExample {
        tokens: vec![7, 8, 9, 3, 12, 13],
        entities: vec![kpi.clone(), cy.clone(), py.clone()],
        relations: vec![RelationInstance::new("kpi-cy", kpi.clone(), cy), RelationInstance::new("kpi-py", kpi, py)],
    };
    let data = std::slice::from_ref(&ex);
    let (_, grads) = m.loss_and_grads(&[&ex]).unwrap();
    let names: Vec<String> = m.params.iter().map(|(n, _)| n.to_owned()).collect();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for name in names {
        for i in 0..m.params.get(&name).unwrap().value.numel() {
            let orig = m.params.get(&name).unwrap().value.data[i];
            m.params.get_mut(&name).unwrap().value.data[i] = orig + eps;
            let lp = m.loss(data).unwrap();
            m.params.get_mut(&name).unwrap().value.data[i] = orig - eps;
            let lm = m.loss(data).unwrap();
            m.params.get_mut(&name).unwrap().value.data[i] = orig;
            worst = worst.max(rel_err(grads[&name].data[i], (lp - lm) / (2.0 * eps)));
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let ops = op_errors();
    let tagger = tagger_error();
    let secs = start.elapsed().as_secs_f64();
    for (op, e) in &ops {
        ensure(*e < 1e-4, || format!("{op}: max relative error {e:e}"))?;
    }
    ensure(tagger < 1e-4, || format!("tagger: max relative error {tagger:e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    let worst_op = ops.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!("{} ops (worst {worst_op:.1e}), tagger L=2 d=16 ({tagger:.1e})", ops.len()))
}

#[derive(Deserialize)]
struct Case {
    pred: Vec<RelationInstance>,
    gold: Vec<RelationInstance>,
    tp: f64,
    #[serde(rename = "fn")]
    fn_: f64,
    fp: f64,
    f1: f64,
}

fn metrics_oracles() -> Outcome {
    let cases: Vec<Case> = serde_json::from_str(&std::fs::read_to_string(fixture("relation_cases.json")).unwrap()).unwrap();
    ensure(cases.len() == 200, || format!("{} oracle cases", cases.len()))?;
    for (i, c) in cases.iter().enumerate() {
        let got = relation_counts(&c.pred, &c.gold);
        let diffs = [got.tp - c.tp, got.fn_ - c.fn_, got.fp - c.fp, got.f1() - c.f1];
        ensure(diffs.iter().all(|d| d.abs() < 1e-12), || format!("oracle case {i}: {diffs:?}"))?;
    }
    let gold = RelationInstance::new("kpi-cy", EntitySpan::new([1, 2, 3], "kpi"), EntitySpan::new([7], "cy"));
    let pred = RelationInstance::new("kpi-cy", EntitySpan::new([2, 3, 4], "kpi"), EntitySpan::new([7], "cy"));
    let c = relation_counts(std::slice::from_ref(&pred), std::slice::from_ref(&gold));
    let hand = [c.tp - 5.0 / 6.0, c.fn_ - 1.0 / 6.0, c.fp - 1.0 / 6.0, adjusted_f1(&[pred], &[gold]) - 5.0 / 6.0];
    ensure(hand.iter().all(|d| d.abs() < 1e-12), || format!("hand case off by {hand:?}"))?;
    let x = tokenize("the quick brown fox");
    let identity = [rouge_n(&x, &x, 1).f1, rouge_n(&x, &x, 2).f1, rouge_l(&x, &x).f1, RougeScores::from_text("a b\nc d", "a b\nc d").average()];
    ensure(identity == [1.0; 4], || format!("identity ROUGE {identity:?}"))?;
    let l = rouge_l(&tokenize("a b c d"), &tokenize("a c b d")).f1;
    ensure(l == 0.75, || format!("ROUGE-L {l}"))?;
    Ok("200 oracle cases to 1e-12, hand case 5/6, ROUGE goldens exact".into())
}

fn checkpoint_format() -> Outcome {
    let bytes = std::fs::read(fixture("golden3.pkpt")).unwrap();
    let store = read_checkpoint(fixture("golden3.pkpt")).map_err(|e| e.to_string())?;
    ensure(write_checkpoint_bytes(&store) == bytes, || "golden3.pkpt does not round-trip".into())?;
    let bad = read_checkpoint(fixture("badmagic.pkpt"));
    ensure(matches!(bad, Err(StoreError::BadMagic(_))), || format!("badmagic.pkpt gave {bad:?}"))?;
    let again = read_checkpoint_bytes(&bytes).unwrap();
    ensure(again == store, || "re-read differs".into())?;
    Ok(format!("{} records round-trip byte-identically; BadMagic on corrupted magic", store.len()))
}

fn bundled_config(name: &str) -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ExperimentConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn emitted(results: &[RunResult]) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    emit_results(results, dir.path()).unwrap();
    ["results.csv", "results.json"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect()
}

/// The bundled tagging sweep on one thread (timed), then again end to end on
/// one thread per run; both outputs must match byte for byte.
fn protocol_and_determinism() -> Outcome {
    let cfg = bundled_config("tagging_sweep.json");
    let start = Instant::now();
    let (pre, first) = pool(1).install(|| {
        let pre = pretrain(&cfg).unwrap();
        let results = run_sweep(&cfg, &pre).unwrap();
        (pre, results)
    });
    let secs = start.elapsed().as_secs_f64();
    println!("{}", markdown_table(&first));

    let mut expect = vec![("none".to_owned(), 0.0)];
    for loc in ["add_norm", "all", "bias", "weights"] {
        for lambda in [0.0, 0.2, 0.41, 0.8] {
            expect.push((loc.to_owned(), lambda));
        }
    }
    let mut cells: Vec<(String, f64)> = first.iter().map(|r| (r.location.clone(), r.lambda)).collect();
    cells.sort_by(|a, b| (a.0 != "none").cmp(&(b.0 != "none")).then(a.0.cmp(&b.0)).then(a.1.total_cmp(&b.1)));
    ensure(cells == expect, || format!("report cells {cells:?}"))?;
    ensure(first.iter().all(|r| r.runs.len() == 5), || "every cell needs 5 seeds".into())?;
    ensure(secs < 900.0, || format!("sweep took {secs:.0}s"))?;

    let clean = pre_finetune_losses(&cfg, &pre, 0.0).unwrap();
    let wrecked = pre_finetune_losses(&cfg, &pre, 10.0).unwrap();
    for ((seed, c), (_, w)) in clean.iter().zip(&wrecked) {
        ensure(w > c, || format!("λ=10 seed {seed}: loss {w:.4} not above {c:.4}"))?;
    }

    let runs = first.iter().map(|r| r.runs.len()).sum::<usize>();
    let second = pool(runs).install(|| run_experiment(&cfg).unwrap());
    ensure(emitted(&first) == emitted(&second), || format!("CSV/JSON differ between 1 and {runs} threads"))?;

    let lo = clean.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let hi = wrecked.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    Ok(format!("{} cells × 5 seeds in {secs:.0}s; λ=10 loss ≥ {hi:.2} vs ≤ {lo:.2}; outputs identical at 1 and {runs} threads", first.len()))
}

// Pilot budget for the summarization model; see README.
const S2S_DIM: usize = 32;
const S2S_STEPS: usize = 2000;
const S2S_PAIRS: usize = 512;
const S2S_LR: f64 = 2e-3;
const ROUGE1_THRESHOLD: f64 = 0.9;

fn seq2seq_config() -> ModelConfig {
    ModelConfig { layers: 1, model_dim: S2S_DIM, heads: 2, vocab: seq2seq_vocab(&TaskShift::NONE), max_len: SEQ2SEQ_MAX_SOURCE, decoder_layers: 1 }
}

fn s2s_train(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig { steps, batch: 16, adam: AdamConfig { lr: S2S_LR, ..Default::default() }, clip_norm: Some(1.0), seed }
}

fn seq2seq_sanity() -> Outcome {
    let train = gen_seq2seq_data(1, S2S_PAIRS, &TaskShift::NONE).unwrap();
    let held_out = gen_seq2seq_data(9, 200, &TaskShift::NONE).unwrap();
    let mut m = Seq2SeqModel::new(seq2seq_config(), 0).unwrap();
    let untrained = evaluate_seq2seq(&m, &held_out, SEQ2SEQ_MAX_TARGET).unwrap().rouge1;
    m.train(&train, &s2s_train(S2S_STEPS, 0)).unwrap();
    let trained = evaluate_seq2seq(&m, &held_out, SEQ2SEQ_MAX_TARGET).unwrap();
    ensure(trained.rouge1 > ROUGE1_THRESHOLD, || format!("held-out ROUGE-1 {:.4} <= {ROUGE1_THRESHOLD}", trained.rouge1))?;

    // perturb → fine-tune → ROUGE on the shifted task, via the bundled config
    let cfg = bundled_config("seq2seq_sweep.json");
    let results = run_experiment(&cfg).map_err(|e| e.to_string())?;
    println!("{}", markdown_table(&results));
    let baseline = results.iter().find(|r| r.location == "none").ok_or("no baseline row")?;
    ensure(results.iter().all(|r| (0.0..=1.0).contains(&r.mean)), || "ROUGE outside [0, 1]".into())?;
    ensure(baseline.mean > 0.5, || format!("fine-tuned baseline ROUGE average {:.4}", baseline.mean))?;
    Ok(format!(
        "held-out ROUGE-1 {:.4} (untrained {untrained:.4}), ROUGE-2 {:.4}; sweep of {} cells, baseline ROUGE average {:.4}",
        trained.rouge1,
        trained.rouge2,
        results.len(),
        baseline.mean
    ))
}
