use super::{sort_results, HarnessError, RunResult};
use std::fmt::Write as _;
use std::path::Path;

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// One row per seed run, sorted by location, λ and seed.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut sorted = results.to_vec();
    sort_results(&mut sorted);
    let mut out = String::from("location,lambda,seed,metric,mean,std,seconds\n");
    for r in &sorted {
        for run in &r.runs {
            writeln!(out, "{},{:.6},{},{:.6},{:.6},{:.6},{:.6}", csv_field(&r.location), r.lambda, run.seed, run.metric, r.mean, r.std, run.seconds)
                .unwrap();
        }
    }
    out
}

pub fn results_json(results: &[RunResult]) -> String {
    let mut sorted = results.to_vec();
    sort_results(&mut sorted);
    serde_json::to_string_pretty(&sorted).expect("results serialize") + "\n"
}

/// Location / λ / mean ± std table with the change against the `none`
/// baseline, baseline first.
pub fn markdown_table(results: &[RunResult]) -> String {
    let mut sorted = results.to_vec();
    sort_results(&mut sorted);
    sorted.sort_by_key(|r| r.location != "none");
    let baseline = sorted.iter().find(|r| r.location == "none" && r.lambda == 0.0).map(|r| r.mean);
    let metric = sorted.first().map_or("metric", |r| r.metric.as_str());
    let mut out = format!("| Noise added to | λ | {metric} (%) | std | Δ vs none |\n|---|---|---|---|---|\n");
    for r in &sorted {
        let delta = baseline.map_or(String::from("–"), |b| format!("{:+.3}", 100.0 * (r.mean - b)));
        writeln!(out, "| {} | {} | {:.3} | {:.3} | {} |", r.location, r.lambda, 100.0 * r.mean, 100.0 * r.std, delta).unwrap();
    }
    out
}

/// Writes `results.csv`, `results.json` and `report.md` into `dir`.
pub fn emit_results(results: &[RunResult], dir: &Path) -> Result<(), HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::NoResults);
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, body) in [("results.csv", results_csv(results)), ("results.json", results_json(results)), ("report.md", markdown_table(results))] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::SeedRun;
    use super::*;

    fn result(location: &str, lambda: f64, metrics: &[f64]) -> RunResult {
        let runs =
            metrics.iter().enumerate().map(|(i, &m)| SeedRun { seed: i as u64 + 1, metric: m, pre_finetune_loss: 1.0, seconds: 0.0 }).collect();
        RunResult::aggregate("t", location.into(), lambda, "adjusted_f1", runs)
    }

    #[test]
    fn csv_layout() {
        let rs = vec![result("bias", 0.4, &[0.5, 0.7]), result("bias", 0.1, &[0.25, 0.75]), result("a,b", 0.0, &[1.0, 1.0])];
        let csv = results_csv(&rs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert_eq!(lines[0], "location,lambda,seed,metric,mean,std,seconds");
        assert_eq!(lines[1], "\"a,b\",0.000000,1,1.000000,1.000000,0.000000,0.000000");
        assert_eq!(lines[3], "bias,0.100000,1,0.250000,0.500000,0.250000,0.000000");
        assert!(lines[5].starts_with("bias,0.400000,1,0.500000,0.600000,0.100000"));
    }

    #[test]
    fn single_result_rows() {
        let csv = results_csv(&[result("none", 0.0, &[0.1, 0.2, 0.3, 0.4, 0.5])]);
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn emit_is_repeatable() {
        let rs = vec![result("none", 0.0, &[0.5]), result("bias", 0.41, &[0.55])];
        let dir = tempfile::tempdir().unwrap();
        emit_results(&rs, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = ["results.csv", "results.json", "report.md"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        emit_results(&rs, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = ["results.csv", "results.json", "report.md"].iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        assert_eq!(first, second);
        let table = String::from_utf8(first[2].clone()).unwrap();
        assert!(table.lines().nth(2).unwrap().starts_with("| none | 0 | 50.000"));
        assert!(table.contains("| bias | 0.41 | 55.000 | 0.000 | +5.000 |"));
        assert!(matches!(emit_results(&[], dir.path()), Err(HarnessError::NoResults)));
    }
}
