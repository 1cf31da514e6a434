use std::path::PathBuf;

use masg_core::harness::{read_csv, run_experiment, write_csv, ExperimentSpec, CSV_COLUMNS};
use masg_core::optimizers::{run_stage, TraceOptions};
use masg_core::problems::make_cycle_quadratic;
use masg_core::{asymptotic_rate, critical_momentum, AsgConfig, DVector, NoiseStream};

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut count = 0;
    for entry in std::fs::read_dir(config_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = ExperimentSpec::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            spec.validate().unwrap();
            assert!(!spec.seeds().is_empty());
            count += 1;
        }
    }
    assert!(count >= 4, "expected example configs, found {count}");
}

#[test]
fn csv_file_round_trip() {
    let spec = ExperimentSpec::from_toml_str(
        r#"
[problem]
kind = "cycle-quadratic"
dimension = 16
lambda = 0.1
seed = 1

[noise]
kind = "additive-gaussian"
sigma2 = 1e-3
seed = 2

[algorithms.m-asg]
[algorithms.m-asg-star]
[algorithms.asg]

[run]
budget = 300
seed_count = 4
"#,
    )
    .unwrap();
    let report = run_experiment(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    write_csv(&report, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, CSV_COLUMNS.join(","));

    let rows = read_csv(&path).unwrap();
    let expected: usize = report.series.iter().map(|s| s.rows.len()).sum();
    assert_eq!(rows.len(), expected);
    for series in &report.series {
        let parsed: Vec<_> = rows.iter().filter(|r| r.algo == series.algo).map(|r| r.row.clone()).collect();
        assert_eq!(parsed, series.rows, "{}", series.algo);
    }
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

#[test]
fn noiseless_decay_matches_asymptotic_rate() {
    let oracle = make_cycle_quadratic(40, 0.01, 9).unwrap();
    let profile = oracle.profile().unwrap();
    let l = profile.l();
    let x0 = DVector::zeros(40);
    for (alpha, beta) in [
        (1.0 / l, None),
        (0.5 / l, None),
        (1.0 / l, Some(0.5)),
        (0.25 / l, Some(0.9)),
    ] {
        let beta = beta.unwrap_or_else(|| critical_momentum(alpha, profile.mu()));
        let rho = asymptotic_rate(alpha, beta, &profile);
        let config = AsgConfig { alpha, beta, steps: 1000 };
        let trace = run_stage(&x0, &config, &oracle, &mut NoiseStream::new(0), TraceOptions::default()).unwrap();
        let start = trace.points[0].subopt;
        // Fit over the window before rounding error takes over.
        let window: Vec<_> = trace.points[20..].iter().filter(|p| p.subopt > start * 1e-20).collect();
        assert!(window.len() > 50, "alpha={alpha} beta={beta}: window too short");
        let xs: Vec<f64> = window.iter().map(|p| p.iter as f64).collect();
        let ys: Vec<f64> = window.iter().map(|p| 0.5 * p.subopt.ln()).collect();
        let empirical = slope(&xs, &ys).exp();
        assert!(
            empirical <= rho + 0.01,
            "alpha={alpha} beta={beta}: empirical {empirical} vs asymptotic {rho}"
        );
    }
}
