use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mfsvar::em::{multi_start_fit, FitResult};
use mfsvar::eval::{param_errors, summarize, sweep_csv, EvalOptions, RunMetadata};
use mfsvar::linalg::{matrix_power, spectral_radius, to_rows};
use mfsvar::model::{presets, simulate_stationary, subsampled_error_covariance, validate_model, SvarModel};
use mfsvar::sampling::{apply, ObservationSet};
use mfsvar::selection;
use mfsvar::{Result, SvarError};
use serde::Serialize;

use crate::config::{DatasetEntry, ExperimentConfig, Manifest, SchemeSpec, MANIFEST};
use crate::Outcome;

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn scheme_rates(spec: &SchemeSpec, p: usize) -> Vec<usize> {
    match spec {
        SchemeSpec::Full => vec![1; p],
        SchemeSpec::Uniform { k } => vec![*k; p],
        SchemeSpec::Mixed { rates } => rates.clone(),
        SchemeSpec::Mask { .. } => Vec::new(),
    }
}

pub fn simulate(cfg: &ExperimentConfig, base: &Path) -> Result<Outcome> {
    let source = cfg
        .model
        .as_ref()
        .ok_or_else(|| SvarError::Argument("simulate needs a model in the config".into()))?;
    let model = source.resolve(base)?;
    let report = validate_model(&model)?;
    for v in &report.violations {
        eprintln!("warning: {v}");
    }
    let scheme = cfg.scheme.build(model.p())?;
    let out = out_dir(cfg);
    fs::create_dir_all(out.join("data"))?;
    let mut groups: Vec<(String, SvarModel, Option<f64>)> = Vec::new();
    if cfg.max_eigenvalues.is_empty() {
        groups.push(("base".into(), model.clone(), None));
    } else {
        for &ev in &cfg.max_eigenvalues {
            let (scaled, factor) = model.with_max_eigenvalue(ev)?;
            groups.push((format!("ev{ev}"), scaled, Some(factor)));
        }
    }
    let mut datasets = Vec::new();
    for (group, truth, factor) in &groups {
        let truth_rel = PathBuf::from(format!("truth_{group}.json"));
        truth.save(&out.join(&truth_rel))?;
        for &seed in &cfg.seeds {
            let traj = simulate_stationary(truth, cfg.t, seed)?;
            let obs = apply(&scheme, &traj)?;
            let name = format!("{group}_seed{seed}");
            let data_rel = PathBuf::from("data").join(format!("{name}.csv"));
            obs.write_csv(&out.join(&data_rel))?;
            for w in &obs.warnings {
                eprintln!("warning: {name}: {w}");
            }
            datasets.push(DatasetEntry {
                name,
                data: data_rel,
                truth: truth_rel.clone(),
                seed,
                t: cfg.t,
                k: scheme_rates(&cfg.scheme, truth.p()),
                group: group.clone(),
                max_eigenvalue: spectral_radius(&truth.a),
                scale_factor: *factor,
            });
        }
    }
    println!("wrote {} dataset(s) to {}", datasets.len(), out.display());
    write_json(&out.join(MANIFEST), &Manifest { datasets })?;
    Ok(Outcome::Done)
}

/// `(name, path)` of the datasets to process.
fn datasets(cfg: &ExperimentConfig, flags: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let explicit: Vec<PathBuf> = if flags.is_empty() { cfg.data.clone() } else { flags.to_vec() };
    if !explicit.is_empty() {
        return Ok(explicit
            .into_iter()
            .map(|p| {
                let name = p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
                (name, p)
            })
            .collect());
    }
    let out = out_dir(cfg);
    let manifest = Manifest::load(&out)?;
    Ok(manifest.datasets.into_iter().map(|d| (d.name, out.join(d.data))).collect())
}

pub fn fit(cfg: &ExperimentConfig, flags: &[PathBuf]) -> Result<Outcome> {
    let out = out_dir(cfg);
    let k = match cfg.k.as_slice() {
        [k] => *k,
        _ => return Err(SvarError::Argument("fit takes a single time scale k".into())),
    };
    let mut all_converged = true;
    for (name, path) in datasets(cfg, flags)? {
        let obs = ObservationSet::read_csv(&path)?.upsample(k)?;
        let result = multi_start_fit(&obs, &cfg.em)?;
        println!(
            "{name}: log-likelihood {:.6}, {} iterations, converged {}",
            result.log_likelihood, result.iterations, result.converged
        );
        all_converged &= result.converged;
        write_json(&out.join("fits").join(format!("{name}.json")), &result)?;
    }
    Ok(if all_converged { Outcome::Done } else { Outcome::NotConverged })
}

pub fn select(cfg: &ExperimentConfig, flags: &[PathBuf]) -> Result<Outcome> {
    let out = out_dir(cfg);
    let mut all_converged = true;
    for (name, path) in datasets(cfg, flags)? {
        let obs = ObservationSet::read_csv(&path)?;
        let variants = cfg.variant_list(obs.p)?;
        let report = selection::select(&obs, &variants, &cfg.em)?;
        for (v, k, msg) in &report.failures {
            eprintln!("warning: {name}: variant {v} (k={k}) failed: {msg}");
        }
        all_converged &= report.failures.is_empty() && report.models.iter().all(|m| m.fit.converged);
        let table = report.table();
        println!("{name}\n{table}");
        write_text(&out.join("selection").join(format!("{name}.txt")), &table)?;
        write_json(&out.join("selection").join(format!("{name}.json")), &report)?;
    }
    Ok(if all_converged { Outcome::Done } else { Outcome::NotConverged })
}

pub fn eval(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = out_dir(cfg);
    let manifest = Manifest::load(&out)?;
    let opts = EvalOptions {
        symmetric_shocks: cfg.symmetric_shocks,
    };
    let mut groups: BTreeMap<String, (Vec<mfsvar::eval::ParamErrors>, RunMetadata)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for d in &manifest.datasets {
        let truth = SvarModel::load(&out.join(&d.truth))?;
        let fit_path = out.join("fits").join(format!("{}.json", d.name));
        let text = fs::read_to_string(&fit_path)
            .map_err(|e| SvarError::Argument(format!("cannot read {}: {e}", fit_path.display())))?;
        let fit: FitResult = serde_json::from_str(&text)?;
        let errors = param_errors(&fit.theta.to_model()?, &truth, opts)?;
        if !groups.contains_key(&d.group) {
            order.push(d.group.clone());
        }
        let entry = groups.entry(d.group.clone()).or_insert_with(|| {
            (
                Vec::new(),
                RunMetadata {
                    label: d.group.clone(),
                    k: d.k.clone(),
                    t: d.t,
                    max_eigenvalue: d.max_eigenvalue,
                    scale_factor: d.scale_factor,
                    runs: 0,
                },
            )
        });
        entry.0.push(errors);
    }
    let mut summaries = Vec::new();
    for label in order {
        let (runs, meta) = groups.remove(&label).expect("group");
        let s = summarize(runs, meta, cfg.histogram_bins)?;
        println!(
            "{label}: {} runs, mean |error| A {:.4} (se {:.4}), C {:.4} (se {:.4})",
            s.metadata.runs, s.mean_abs_error_a, s.std_error_a, s.mean_abs_error_c, s.std_error_c
        );
        let dir = out.join("eval");
        write_text(&dir.join(format!("{label}_errors.csv")), &s.errors_csv())?;
        write_text(&dir.join(format!("{label}_histograms.csv")), &s.histogram_csv())?;
        write_json(&dir.join(format!("{label}_summary.json")), &s)?;
        summaries.push(s);
    }
    write_text(&out.join("eval").join("sweep.csv"), &sweep_csv(&summaries))?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct Confound {
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "A_k")]
    a_k: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
    cholesky: Vec<Vec<f64>>,
}

fn fmt_matrix(m: &[Vec<f64>]) -> String {
    let rows: Vec<String> = m
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}

pub fn demo_confound(k: usize, json: bool) -> Result<Outcome> {
    let model = presets::confound_example();
    let a_k = matrix_power(&model.a, k);
    let cov = subsampled_error_covariance(&model, k)?;
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| SvarError::Numerical {
            time: None,
            message: "subsampled covariance is not positive definite".into(),
        })?
        .l();
    let demo = Confound {
        k,
        a: to_rows(&model.a),
        c: to_rows(&model.c),
        a_k: to_rows(&a_k),
        covariance: to_rows(&cov),
        cholesky: to_rows(&chol),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&demo)?);
        return Ok(Outcome::Done);
    }
    println!("true model at the causal time scale (unit-variance shocks):");
    println!("  A = {}   lagged effect x1 -> x2: {:.4}", fmt_matrix(&demo.a), model.a[(1, 0)]);
    println!("  C = {}   no instantaneous effect", fmt_matrix(&demo.c));
    println!("observed every {k} steps:");
    println!("  A^{k} = {}   lagged effect x1 -> x2: {:.4}", fmt_matrix(&demo.a_k), a_k[(1, 0)]);
    println!("  error covariance L(I (x) Lambda)L^T = {}", fmt_matrix(&demo.covariance));
    println!("  Cholesky factor = {}", fmt_matrix(&demo.cholesky));
    println!(
        "apparent structure: no lagged effect, instantaneous effect x1 -> x2 of {:.4}; the reverse of the truth",
        chol[(1, 0)]
    );
    Ok(Outcome::Done)
}
