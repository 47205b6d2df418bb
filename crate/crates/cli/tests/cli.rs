use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nssmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nssmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONJUGATE: &str = r#"{"name": "conjugate_gaussian", "obs": [0.5, 0.1], "noise_sd": 0.7}"#;

#[test]
fn smoke_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = nssmc(&[
        "--model",
        CONJUGATE,
        "--algorithm",
        "tasmc_fixed",
        "--n",
        "60",
        "--runs",
        "2",
        "--seed",
        "5",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "summary.csv",
        "runs.csv",
        "timing.csv",
        "replay.json",
        "tuning.json",
        "levels-pilot.csv",
        "levels-1.csv",
        "levels-2.csv",
        "archive-1.jsonl",
        "archive-2.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    // Tempering has no log p curve.
    assert!(!out.join("curve-1.csv").exists());
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(runs.starts_with("run,seed,log_z,z,z_ratio,evals,levels,archive"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"n": 10, "unknown_key": true}"#).unwrap();
    assert_eq!(nssmc(&["--config", path(&cfg)]).status.code(), Some(2));
    assert_eq!(nssmc(&["--rho", "1.5"]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    let o = nssmc(&[
        "--model",
        CONJUGATE,
        "--algorithm",
        "nssmc_fixed",
        "--replay",
        path(&missing),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(nssmc(&["--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn sampler_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // A temperature schedule with more levels than the recorded kernels.
    let replay = dir.path().join("replay.json");
    fs::write(
        &replay,
        r#"{"schedule": {"kind": "temperatures", "temperatures": [0.0, 0.5, 1.0]},
            "plan": {"tuned": {"family": "rw", "options": {}, "levels": []}}}"#,
    )
    .unwrap();
    let o = nssmc(&[
        "--model",
        CONJUGATE,
        "--algorithm",
        "tasmc_fixed",
        "--n",
        "20",
        "--replay",
        path(&replay),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = nssmc(&[
            "--model",
            CONJUGATE,
            "--algorithm",
            "ins",
            "--n",
            "50",
            "--runs",
            "3",
            "--seed",
            "77",
            "--out",
            path(&out),
        ]);
        assert!(o.status.success());
        summaries.push((
            fs::read(out.join("summary.csv")).unwrap(),
            fs::read(out.join("runs.csv")).unwrap(),
            fs::read(out.join("curve-2.csv")).unwrap(),
        ));
    }
    assert_eq!(summaries[0], summaries[1]);
}

fn read_curve(file: &Path) -> Vec<(f64, f64)> {
    let mut r = csv::Reader::from_path(file).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[1].parse().unwrap())
        })
        .collect()
}

/// Linear interpolation of `log L` at `x` on a curve sorted by `log p`.
fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    let i = curve
        .partition_point(|(p, _)| *p < x)
        .clamp(1, curve.len() - 1);
    let (x0, y0) = curve[i - 1];
    let (x1, y1) = curve[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[test]
fn sphere_curve_shows_the_phase_transition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.json");
    fs::write(
        &cfg,
        r#"{"model": {"name": "sphere_mixture", "dimension": 10}, "algorithm": "nssmc_adaptive",
            "n": 1000, "rho": 0.37, "termination": {"eps": 0.0, "max_fraction": 0.75},
            "kernel": {"family": "exact"}, "seed": 3, "archives": false}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = nssmc(&["--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = read_curve(&out.join("curve-1.csv"));
    assert!(curve
        .windows(2)
        .all(|w| w[1].0 < w[0].0 && w[1].1 >= w[0].1));

    let mut sorted = curve.clone();
    sorted.reverse();
    // Chord slopes over unit steps of log p. A concave curve has slopes
    // that never increase with log p; the spike makes them jump upwards.
    let xs: Vec<f64> = (-40..=-5).map(f64::from).collect();
    let slopes: Vec<f64> = xs
        .windows(2)
        .map(|w| interpolate(&sorted, w[1]) - interpolate(&sorted, w[0]))
        .collect();
    let (at, jump) = slopes
        .windows(2)
        .enumerate()
        .map(|(i, s)| (xs[i + 1], s[1] - s[0]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!(jump > 1.0, "largest slope increase {jump}");
    assert!(
        (-31.0..=-23.0).contains(&at),
        "non-concavity at log p = {at}"
    );
}

#[test]
fn constant_likelihood_curve_is_flat() {
    // With a huge noise scale the likelihood is constant in floating point:
    // every exported log L agrees and the estimate is exactly that constant.
    let dir = tempfile::tempdir().unwrap();
    for algorithm in ["ns", "nssmc_adaptive"] {
        let out = dir.path().join(algorithm);
        let o = nssmc(&[
            "--model",
            r#"{"name": "conjugate_gaussian", "obs": [0.0], "noise_sd": 1e9}"#,
            "--algorithm",
            algorithm,
            "--n",
            "50",
            "--out",
            path(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let curve = read_curve(&out.join("curve-1.csv"));
        assert!(curve.windows(2).all(|w| w[0].1 == w[1].1));
        let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
        let row = r.records().next().unwrap().unwrap();
        let mean_log_z: f64 = row[4].parse().unwrap();
        let log_z_true: f64 = row[9].parse().unwrap();
        assert!((mean_log_z - log_z_true).abs() < 1e-9, "{algorithm}");
    }
}
