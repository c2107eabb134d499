use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfsvar::em::{FitResult, Theta};
use mfsvar::model::SvarModel;
use mfsvar::selection::{bic_value, SelectionReport};

fn mfsvar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfsvar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run mfsvar")
}

fn write_config(dir: &Path, json: &str) {
    fs::write(dir.join("config.json"), json).unwrap();
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn demo_confound_prints_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfsvar(dir.path(), &["demo-confound"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[[1.8900, -0.4000], [-0.4000, 1.6400]]"), "{text}");
    assert!(text.contains("A^2 = [[0.6400, 0.0000], [0.0000, 0.6400]]"), "{text}");

    let out = mfsvar(dir.path(), &["demo-confound", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let chol: Vec<Vec<f64>> = serde_json::from_value(v["cholesky"].clone()).unwrap();
    // Oracle: lower Cholesky factor of [[1.89, -.4], [-.4, 1.64]] by hand.
    let l11 = 1.89f64.sqrt();
    let l21 = -0.4 / l11;
    assert!((chol[1][0] - l21).abs() < 1e-12 && chol[1][0] != 0.0);
    assert!((chol[1][1] - (1.64 - l21 * l21).sqrt()).abs() < 1e-12);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c1", "scheme": {"kind": "uniform", "k": 2}, "t": 805, "seeds": [0,1,2,3,4,5,6,7,8,9]}"#,
    );
    for run in ["a", "b"] {
        let out = mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", run]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files: Vec<_> = fs::read_dir(dir.path().join("a/data")).unwrap().collect();
    assert_eq!(files.len(), 10);
    for seed in 0..10 {
        let name = format!("data/base_seed{seed}.csv");
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b);
    }
    assert_ne!(
        fs::read(dir.path().join("a/data/base_seed0.csv")).unwrap(),
        fs::read(dir.path().join("a/data/base_seed1.csv")).unwrap()
    );
    let truth = SvarModel::load(&dir.path().join("a/truth_base.json")).unwrap();
    assert_eq!(truth.a[(1, 0)], 0.2);
}

#[test]
fn simulate_shapes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), r#"{"model": "a1c2", "t": 2, "seeds": [3]}"#);
    let out = mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "short", "--k", "1"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("short/data/base_seed3.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);

    write_config(dir.path(), r#"{"model": "a1c2", "t": 9, "seeds": [3]}"#);
    let out = mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "mixed", "--k", "1,2"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("mixed/data/base_seed3.csv")).unwrap();
    for (row, line) in text.lines().skip(1).enumerate() {
        let t = row + 1;
        let cells: Vec<&str> = line.split(',').collect();
        assert!(!cells[1].is_empty());
        assert_eq!(cells[2].is_empty(), t % 2 == 0, "row {t}: {line}");
    }
}

#[test]
fn gaussian_fit_converges_quickly_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c2", "t": 400, "seeds": [1],
            "em": {"components": 1, "zero_means": true, "restarts": 3, "seed": 4}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    let out = mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(dir.path().join("run/fits/base_seed1.json")).unwrap();
    let fit: FitResult = serde_json::from_slice(&first).unwrap();
    assert!(fit.converged && fit.iterations <= 20, "{} iterations", fit.iterations);

    assert_eq!(code(&mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run"])), 0);
    assert_eq!(first, fs::read(dir.path().join("run/fits/base_seed1.json")).unwrap());
}

#[test]
fn subsampled_fit_has_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c1", "scheme": {"kind": "uniform", "k": 2}, "t": 121, "seeds": [5],
            "em": {"restarts": 2, "max_iterations": 200}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    let out = mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run", "--seed", "8"]);
    assert!(matches!(code(&out), 0 | 3));
    let fit: FitResult = serde_json::from_slice(&fs::read(dir.path().join("run/fits/base_seed5.json")).unwrap()).unwrap();
    assert_eq!(code(&out) == 0, fit.converged);
    assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c1", "scheme": {"kind": "uniform", "k": 2}, "t": 61, "seeds": [0],
            "em": {"restarts": 1, "max_iterations": 1}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    let out = mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run"]);
    assert_eq!(code(&out), 3);
    assert!(dir.path().join("run/fits/base_seed0.json").exists());
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "t,x1,x2\n1,0.5,abc\n").unwrap();
    let out = mfsvar(dir.path(), &["fit", "--data", "bad.csv"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());

    let out = mfsvar(dir.path(), &["eval", "--out", "nowhere"]);
    assert_eq!(code(&out), 2);

    write_config(dir.path(), r#"{"model": "a1c1", "t": 30, "seeds": [0], "em": {"restarts": 1, "max_iterations": 5}}"#);
    assert!(matches!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0));
    assert!(matches!(code(&mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run"])), 0 | 3));
    fs::remove_file(dir.path().join("run/truth_base.json")).unwrap();
    assert_eq!(code(&mfsvar(dir.path(), &["eval", "--config", "config.json", "--out", "run"])), 2);

    assert_eq!(code(&mfsvar(dir.path(), &["select", "--data", "bad.csv", "--variant", "sideways"])), 2);
}

#[test]
fn eval_of_exact_fit_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a2c2", "t": 40, "seeds": [0, 1], "em": {"restarts": 1, "max_iterations": 3}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    assert!(matches!(code(&mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run"])), 0 | 3));
    let truth = SvarModel::load(&dir.path().join("run/truth_base.json")).unwrap();
    for seed in 0..2 {
        let path = dir.path().join(format!("run/fits/base_seed{seed}.json"));
        let mut fit: FitResult = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        fit.theta = Theta::from_model(&truth, true).unwrap();
        fs::write(&path, serde_json::to_string(&fit).unwrap()).unwrap();
    }
    let out = mfsvar(dir.path(), &["eval", "--config", "config.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/eval/base_errors.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 8);
    for row in rows {
        let err: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 1e-12, "{row}");
    }
}

#[test]
fn eigenvalue_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c2", "scheme": {"kind": "uniform", "k": 2}, "t": 41, "seeds": [0, 1],
            "max_eigenvalues": [0.9, 0.5], "em": {"restarts": 1, "max_iterations": 5}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    assert!(matches!(code(&mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run"])), 0 | 3));
    assert_eq!(code(&mfsvar(dir.path(), &["eval", "--config", "config.json", "--out", "run"])), 0);
    let sweep = fs::read_to_string(dir.path().join("run/eval/sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("label,max_eigenvalue"));
    let ev: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!((ev - 0.5).abs() < 1e-9);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/eval/ev0.9_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metadata"]["runs"], 2);
    assert!(summary["metadata"]["scale_factor"].as_f64().unwrap() > 0.0);
}

#[test]
fn selection_grid_and_bic_identity() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c2", "t": 41, "seeds": [2], "em": {"restarts": 2, "max_iterations": 30}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    let out = mfsvar(dir.path(), &["select", "--config", "config.json", "--out", "run", "--variant", "free"]);
    assert!(matches!(code(&out), 0 | 3));
    let table = fs::read_to_string(dir.path().join("run/selection/base_seed2.txt")).unwrap();
    assert_eq!(table.lines().count(), 2);

    let out = mfsvar(
        dir.path(),
        &["select", "--config", "config.json", "--out", "run", "--variant", "identity,free", "--k", "1,2"],
    );
    assert!(matches!(code(&out), 0 | 3), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("run/selection/base_seed2.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("k=1") && lines[0].contains("k=2"));
    assert!(lines[1].starts_with("identity") && lines[2].starts_with("free"));
    let report: SelectionReport =
        serde_json::from_slice(&fs::read(dir.path().join("run/selection/base_seed2.json")).unwrap()).unwrap();
    assert_eq!(report.models.len(), 4);
    for m in &report.models {
        assert_eq!(m.bic, bic_value(m.fit.log_likelihood, m.d, m.n));
    }
    assert!(report.models.windows(2).all(|w| w[0].bic <= w[1].bic));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"model": "a1c1", "scheme": {"kind": "uniform", "k": 2}, "t": 61, "seeds": [0],
            "em": {"restarts": 4, "max_iterations": 20}}"#,
    );
    assert_eq!(code(&mfsvar(dir.path(), &["simulate", "--config", "config.json", "--out", "run"])), 0);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = mfsvar(dir.path(), &["fit", "--config", "config.json", "--out", "run", "--threads", threads]);
        assert!(matches!(code(&out), 0 | 3));
        outputs.push(fs::read(dir.path().join("run/fits/base_seed0.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
