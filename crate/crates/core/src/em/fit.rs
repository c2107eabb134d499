use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mstep::m_step;
use super::{e_step, EmConfig, ExpectedStats, Theta};
use crate::error::{Result, SvarError};
use crate::linalg::{principal_root, spectral_radius};
use crate::model::MixtureSpec;
use crate::sampling::ObservationSet;

/// Spectral radius cap applied to random initial transition matrices.
const INIT_MAX_RADIUS: f64 = 0.98;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Theta,
    pub log_likelihood: f64,
    /// Observed log-likelihood of the initial and every accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
    /// Accepted over-relaxed (extrapolated) steps.
    pub relaxed_steps: usize,
    /// Plain EM steps that would have lowered the likelihood beyond the slack.
    pub em_decreases: usize,
    pub w_stalls: usize,
    pub restart_index: usize,
    pub restarts: Vec<RestartSummary>,
    pub transitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<f64>,
}

impl FitResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn summary(&self, index: usize) -> RestartSummary {
        RestartSummary {
            index,
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
            failure: self.failure.clone(),
        }
    }
}

/// Parameter vector used for over-relaxed extrapolation: `A`, `W`, free
/// means, log-variances and weight logits against the first component.
fn pack(theta: &Theta, zero_means: bool) -> Vec<f64> {
    let mut v: Vec<f64> = theta.a.iter().chain(theta.w.iter()).cloned().collect();
    for s in &theta.shocks {
        if !zero_means {
            v.extend(&s.means);
        }
        let start = usize::from(theta.scale_fixed);
        v.extend(s.variances[start..].iter().map(|x| x.ln()));
        v.extend(s.weights[1..].iter().map(|w| (w / s.weights[0]).ln()));
    }
    v
}

fn unpack(template: &Theta, v: &[f64], zero_means: bool) -> Theta {
    let p = template.p();
    let m = template.components();
    let mut it = v.iter().cloned();
    let a = DMatrix::from_iterator(p, p, it.by_ref().take(p * p));
    let w = DMatrix::from_iterator(p, p, it.by_ref().take(p * p));
    let mut shocks = Vec::with_capacity(p);
    for _ in 0..p {
        let means = if zero_means {
            vec![0.0; m]
        } else {
            it.by_ref().take(m).collect()
        };
        let mut variances = Vec::with_capacity(m);
        if template.scale_fixed {
            variances.push(1.0);
        }
        variances.extend(it.by_ref().take(m - variances.len()).map(f64::exp));
        let logits: Vec<f64> = std::iter::once(0.0).chain(it.by_ref().take(m - 1)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = ex.iter().sum();
        shocks.push(MixtureSpec {
            weights: ex.iter().map(|e| e / total).collect(),
            means,
            variances,
        });
    }
    Theta {
        a,
        w,
        shocks,
        scale_fixed: template.scale_fixed,
    }
}

fn extrapolate(from: &Theta, to: &Theta, eta: f64, zero_means: bool) -> Option<Theta> {
    let a = pack(from, zero_means);
    let b = pack(to, zero_means);
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        return None;
    }
    let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + eta * (y - x)).collect();
    let cand = unpack(to, &v, zero_means);
    cand.check().ok().map(|_| cand)
}

/// Adaptive over-relaxed EM from one starting point.
pub fn em_fit(init: &Theta, obs: &ObservationSet, config: &EmConfig) -> FitResult {
    let started = Instant::now();
    let mut result = FitResult {
        theta: init.clone(),
        log_likelihood: f64::NEG_INFINITY,
        trace: Vec::new(),
        iterations: 0,
        converged: false,
        failure: None,
        relaxed_steps: 0,
        em_decreases: 0,
        w_stalls: 0,
        restart_index: 0,
        restarts: Vec::new(),
        transitions: obs.transitions(),
        wall_clock_ms: None,
    };
    let finish = |mut r: FitResult| {
        if config.record_timings {
            r.wall_clock_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        r.restarts = vec![r.summary(r.restart_index)];
        r
    };
    if let Err(e) = config.validate() {
        result.failure = Some(e.to_string());
        return finish(result);
    }
    let budget = config.assignment_budget;
    let (mut stats, mut ll): (ExpectedStats, f64) = match e_step(init, obs, budget) {
        Ok(v) => v,
        Err(e) => {
            result.failure = Some(e.to_string());
            return finish(result);
        }
    };
    let mut theta = init.clone();
    result.trace.push(ll);
    result.log_likelihood = ll;
    let mut eta = 1.0;
    for iter in 1..=config.max_iterations {
        result.iterations = iter;
        let (theta_em, info) = match m_step(&theta, &stats, config) {
            Ok(v) => v,
            Err(e) => {
                result.failure = Some(e.to_string());
                break;
            }
        };
        if info.w_stalled {
            result.w_stalls += 1;
        }
        let mut next: Option<(Theta, ExpectedStats, f64)> = None;
        if config.over_relaxation && eta > 1.0 {
            if let Some(cand) = extrapolate(&theta, &theta_em, eta, config.zero_means) {
                if let Ok((s, l)) = e_step(&cand, obs, budget) {
                    if l >= ll {
                        next = Some((cand, s, l));
                        result.relaxed_steps += 1;
                        eta *= config.eta_growth;
                    }
                }
            }
            if next.is_none() {
                eta = 1.0;
            }
        }
        if next.is_none() {
            match e_step(&theta_em, obs, budget) {
                Ok((s, l)) if l >= ll - config.ascent_slack => {
                    next = Some((theta_em, s, l));
                    if config.over_relaxation {
                        eta *= config.eta_growth;
                    }
                }
                Ok(_) => {
                    // Only rounding can make a plain EM step go downhill; stop here.
                    result.em_decreases += 1;
                    result.converged = true;
                    break;
                }
                Err(e) => {
                    result.failure = Some(e.to_string());
                    break;
                }
            }
        }
        let (t_new, s_new, l_new) = next.expect("accepted step");
        let rel = (l_new - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        theta = t_new;
        stats = s_new;
        ll = l_new;
        result.trace.push(ll);
        result.theta = theta.clone();
        result.log_likelihood = ll;
        if rel < config.tolerance {
            result.converged = true;
            break;
        }
    }
    finish(result)
}

/// Independent RNG stream for restart `index` under root seed `seed`.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Random starting point: `A` from the anchor-to-anchor regression (root of
/// the estimated `A^k`) plus `N(0, 0.2^2)` jitter, capped at spectral radius
/// 0.98; `W = I + N(0, 0.1^2)` on free entries; centred `N(0, 0.5^2)` means,
/// uniform weights and log-uniform variances on `[0.04, 1]`.
pub fn initialize<R: Rng>(obs: &ObservationSet, config: &EmConfig, rng: &mut R) -> Result<Theta> {
    let p = obs.p;
    let m = config.components;
    config.constraint.check(p)?;
    let (a_base, resid_var) = anchor_regression(obs)?;
    let jitter = Normal::new(0.0, 0.2).unwrap();
    let mut a = a_base.map(|v| v + jitter.sample(rng));
    let rho = spectral_radius(&a);
    if rho > INIT_MAX_RADIUS {
        a *= INIT_MAX_RADIUS / rho;
    }
    let w_jitter = Normal::new(0.0, 0.1).unwrap();
    let w = match config.constraint.free_w_entries(p)? {
        None => DMatrix::identity(p, p),
        Some(free) => DMatrix::from_fn(p, p, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            if free[i + j * p] {
                base + w_jitter.sample(rng)
            } else {
                base
            }
        }),
    };
    let mean_draw = Normal::new(0.0, 0.5).unwrap();
    let scale_fixed = config.constraint.scale_fixed();
    let shocks = (0..p)
        .map(|j| {
            let mut means: Vec<f64> = if config.zero_means {
                vec![0.0; m]
            } else {
                (0..m).map(|_| mean_draw.sample(rng)).collect()
            };
            let centre = means.iter().sum::<f64>() / m as f64;
            means.iter_mut().for_each(|v| *v -= centre);
            let variances = (0..m)
                .map(|i| {
                    if i == 0 && scale_fixed {
                        1.0
                    } else {
                        let u: f64 = rng.random_range(0.04f64.ln()..=0.0);
                        let scale = if scale_fixed { 1.0 } else { resid_var[j] };
                        scale * u.exp()
                    }
                })
                .collect();
            MixtureSpec {
                weights: vec![1.0 / m as f64; m],
                means,
                variances,
            }
        })
        .collect();
    let theta = Theta {
        a,
        w,
        shocks,
        scale_fixed,
    };
    theta.check()?;
    Ok(theta)
}

/// Least-squares fit of `x_{t1}` on `x_{t0}` over the most common block
/// length `k`, turned into a one-step matrix by a principal `k`-th root.
/// Also returns per-series residual variances per step.
fn anchor_regression(obs: &ObservationSet) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let p = obs.p;
    let mut counts = std::collections::BTreeMap::new();
    for b in &obs.blocks {
        *counts.entry(b.steps()).or_insert(0usize) += 1;
    }
    let (&k, _) = counts.iter().max_by_key(|(_, &c)| c).expect("at least one block");
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = obs
        .blocks
        .iter()
        .filter(|b| b.steps() == k)
        .map(|b| {
            (
                DVector::from_column_slice(&b.values[0]),
                DVector::from_column_slice(&b.values[b.steps()]),
            )
        })
        .collect();
    let n = pairs.len() as f64;
    let mean0 = pairs.iter().fold(DVector::zeros(p), |acc, (a, _)| acc + a) / n;
    let mean1 = pairs.iter().fold(DVector::zeros(p), |acc, (_, b)| acc + b) / n;
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(p, p);
    for (a, b) in &pairs {
        let da = a - &mean0;
        let db = b - &mean1;
        gram += &da * da.transpose();
        cross += &db * da.transpose();
    }
    let fallback = || (DMatrix::identity(p, p) * 0.5, vec![1.0; p]);
    let Some(ginv) = gram.try_inverse() else {
        return Ok(fallback());
    };
    let m_hat = cross * ginv;
    let mut resid_var = vec![0.0; p];
    for (a, b) in &pairs {
        let r = (b - &mean1) - &m_hat * (a - &mean0);
        for j in 0..p {
            resid_var[j] += r[j] * r[j] / (n * k as f64);
        }
    }
    if resid_var.iter().any(|v| !(*v > 0.0)) {
        resid_var = vec![1.0; p];
    }
    let root = principal_root(&m_hat, k).unwrap_or_else(|| {
        DMatrix::from_diagonal(&DVector::from_iterator(
            p,
            m_hat
                .diagonal()
                .iter()
                .map(|d| d.signum() * d.abs().powf(1.0 / k as f64)),
        ))
    });
    if root.iter().all(|v| v.is_finite()) {
        Ok((root, resid_var))
    } else {
        Ok((fallback().0, resid_var))
    }
}

/// Best of `config.restarts` independently initialised EM runs.
pub fn multi_start_fit(obs: &ObservationSet, config: &EmConfig) -> Result<FitResult> {
    multi_start_fit_with(obs, config, &[])
}

/// As [`multi_start_fit`], with extra starting points tried after the
/// random restarts (used for warm starts from nested models).
pub fn multi_start_fit_with(obs: &ObservationSet, config: &EmConfig, extra: &[Theta]) -> Result<FitResult> {
    config.validate()?;
    let total = config.restarts + extra.len();
    let runs: Vec<FitResult> = (0..total)
        .into_par_iter()
        .map(|index| {
            let init = if index < config.restarts {
                initialize(obs, config, &mut restart_rng(config.seed, index))
            } else {
                Ok(extra[index - config.restarts].clone())
            };
            let mut r = match init {
                Ok(theta) => em_fit(&theta, obs, config),
                Err(e) => FitResult {
                    theta: Theta {
                        a: DMatrix::zeros(obs.p, obs.p),
                        w: DMatrix::identity(obs.p, obs.p),
                        shocks: Vec::new(),
                        scale_fixed: true,
                    },
                    log_likelihood: f64::NEG_INFINITY,
                    trace: Vec::new(),
                    iterations: 0,
                    converged: false,
                    failure: Some(e.to_string()),
                    relaxed_steps: 0,
                    em_decreases: 0,
                    w_stalls: 0,
                    restart_index: index,
                    restarts: Vec::new(),
                    transitions: obs.transitions(),
                    wall_clock_ms: None,
                },
            };
            r.restart_index = index;
            r
        })
        .collect();
    let summaries: Vec<RestartSummary> = runs.iter().map(|r| r.summary(r.restart_index)).collect();
    let best = runs
        .into_iter()
        .filter(|r| !r.failed() && r.log_likelihood.is_finite())
        .fold(None::<FitResult>, |best, r| match best {
            Some(b) if b.log_likelihood >= r.log_likelihood => Some(b),
            _ => Some(r),
        });
    match best {
        Some(mut b) => {
            b.restarts = summaries;
            Ok(b)
        }
        None => Err(SvarError::FitFailed(format!(
            "all {total} restarts failed: {}",
            summaries
                .iter()
                .filter_map(|s| s.failure.clone())
                .next()
                .unwrap_or_default()
        ))),
    }
}
