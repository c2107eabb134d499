use nalgebra::{DMatrix, DVector};

use super::Theta;
use crate::error::{Result, SvarError};
use crate::kalman::{covariance_pass, mean_pass, CovariancePass};
use crate::linalg::{logsumexp, symmetrize};
use crate::sampling::{Block, ObservationSet};

/// Default cap on assignments enumerated per block.
pub const DEFAULT_ASSIGNMENT_BUDGET: u128 = 1 << 20;

/// Odometer over all component assignments of a block's shock slots.
/// Slot `(s - 1) * p + j` holds the component of shock `j` at step `s`.
#[derive(Debug, Clone)]
pub struct Assignments {
    current: Option<Vec<usize>>,
    m: usize,
}

impl Iterator for Assignments {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let mut next = out.clone();
        let mut carry = true;
        for slot in next.iter_mut().rev() {
            *slot += 1;
            if *slot < self.m {
                carry = false;
                break;
            }
            *slot = 0;
        }
        self.current = if carry { None } else { Some(next) };
        Some(out)
    }
}

pub fn enumerate_assignments(block: &Block, m: usize, p: usize, budget: u128) -> Result<Assignments> {
    assignments_for(block.steps() * p, m, budget)
}

fn assignments_for(slots: usize, m: usize, budget: u128) -> Result<Assignments> {
    if m == 0 {
        return Err(SvarError::Argument("need at least one component".into()));
    }
    let required = (m as u128).checked_pow(slots as u32).unwrap_or(u128::MAX);
    if required > budget {
        return Err(SvarError::Capacity { required, budget });
    }
    Ok(Assignments {
        current: Some(vec![0; slots]),
        m,
    })
}

/// Posterior-weighted moments of one `(series j, component i)` pair summed
/// over transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    /// `sum_t E(z_tji)`
    pub mass: f64,
    /// `sum_t E(z_tji x_t)`
    pub x: DVector<f64>,
    /// `sum_t E(z_tji x_{t-1})`
    pub x_prev: DVector<f64>,
    /// `sum_t E(z_tji x_t x_t^T)`
    pub xx: DMatrix<f64>,
    /// `sum_t E(z_tji x_{t-1} x_{t-1}^T)`
    pub pp: DMatrix<f64>,
    /// `sum_t E(z_tji x_t x_{t-1}^T)`
    pub xp: DMatrix<f64>,
}

impl ComponentStats {
    pub fn zeros(p: usize) -> Self {
        ComponentStats {
            mass: 0.0,
            x: DVector::zeros(p),
            x_prev: DVector::zeros(p),
            xx: DMatrix::zeros(p, p),
            pp: DMatrix::zeros(p, p),
            xp: DMatrix::zeros(p, p),
        }
    }

    fn add_scaled(&mut self, w: f64, other: &ComponentStats) {
        self.mass += w * other.mass;
        self.x.axpy(w, &other.x, 1.0);
        self.x_prev.axpy(w, &other.x_prev, 1.0);
        self.xx += &other.xx * w;
        self.pp += &other.pp * w;
        self.xp += &other.xp * w;
    }
}

/// Expected sufficient statistics of the complete-data log-likelihood.
#[derive(Debug, Clone)]
pub struct ExpectedStats {
    pub p: usize,
    pub m: usize,
    /// Number of transitions `T` (shock time points) covered.
    pub transitions: usize,
    /// Indexed by `j * m + i`.
    pub comps: Vec<ComponentStats>,
    /// Per-transition responsibilities, `[(t * p + j) * m + i]`, transitions
    /// ordered by block then step.
    pub responsibilities: Vec<f64>,
}

impl ExpectedStats {
    pub fn comp(&self, j: usize, i: usize) -> &ComponentStats {
        &self.comps[j * self.m + i]
    }

    pub fn responsibility(&self, t: usize, j: usize, i: usize) -> f64 {
        self.responsibilities[(t * self.p + j) * self.m + i]
    }
}

/// Covariance passes and shock means for every assignment of one pattern.
struct PatternCache {
    assignments: Vec<Vec<usize>>,
    log_prior: Vec<f64>,
    shock_means: Vec<Vec<DVector<f64>>>,
    passes: Vec<CovariancePass>,
}

fn pattern_cache(
    theta: &Theta,
    c: &DMatrix<f64>,
    observed: &[Vec<usize>],
    budget: u128,
) -> Result<PatternCache> {
    let p = theta.p();
    let m = theta.components();
    let steps = observed.len() - 1;
    // Per-step shock moments for each joint assignment of the p shocks.
    let combos: Vec<Vec<usize>> = assignments_for(p, m, u128::MAX)?.collect();
    let step_mean: Vec<DVector<f64>> = combos
        .iter()
        .map(|z| c * DVector::from_iterator(p, (0..p).map(|j| theta.shocks[j].means[z[j]])))
        .collect();
    let step_cov: Vec<DMatrix<f64>> = combos
        .iter()
        .map(|z| {
            let var = DVector::from_iterator(p, (0..p).map(|j| theta.shocks[j].variances[z[j]]));
            let mut q = c * DMatrix::from_diagonal(&var) * c.transpose();
            symmetrize(&mut q);
            q
        })
        .collect();
    let combo_index = |z: &[usize]| z.iter().fold(0, |acc, &i| acc * m + i);

    let assignments: Vec<Vec<usize>> = assignments_for(steps * p, m, budget)?.collect();
    let mut log_prior = Vec::with_capacity(assignments.len());
    let mut shock_means = Vec::with_capacity(assignments.len());
    let mut passes = Vec::with_capacity(assignments.len());
    for a in &assignments {
        let lp: f64 = a
            .iter()
            .enumerate()
            .map(|(slot, &i)| theta.shocks[slot % p].weights[i].ln())
            .sum();
        let idx: Vec<usize> = (0..steps).map(|s| combo_index(&a[s * p..(s + 1) * p])).collect();
        let covs: Vec<DMatrix<f64>> = idx.iter().map(|&k| step_cov[k].clone()).collect();
        let means: Vec<DVector<f64>> = idx.iter().map(|&k| step_mean[k].clone()).collect();
        passes.push(covariance_pass(&theta.a, &covs, observed)?);
        shock_means.push(means);
        log_prior.push(lp);
    }
    Ok(PatternCache {
        assignments,
        log_prior,
        shock_means,
        passes,
    })
}

/// Per-block contribution: log-likelihood, per-step slot statistics.
struct BlockStats {
    log_likelihood: f64,
    /// `[(s * p + j) * m + i]` for steps `s` of the block.
    per_slot: Vec<ComponentStats>,
    resp: Vec<f64>,
}

fn block_stats(theta: &Theta, block: &Block, cache: &PatternCache) -> Result<BlockStats> {
    let p = theta.p();
    let m = theta.components();
    let n = block.steps();
    let x0 = DVector::from_column_slice(block.anchor());
    let count = cache.assignments.len();
    let mut log_w = Vec::with_capacity(count);
    let mut all_means = Vec::with_capacity(count);
    for k in 0..count {
        let (means, ll) = mean_pass(
            &cache.passes[k],
            &theta.a,
            &cache.shock_means[k],
            &block.observed,
            &block.values,
            &x0,
        );
        log_w.push(cache.log_prior[k] + ll);
        all_means.push(means);
    }
    let lse = logsumexp(&log_w);
    if !lse.is_finite() {
        return Err(SvarError::numerical(format!(
            "block {}..{} has no assignment with finite likelihood",
            block.t0, block.t1
        )));
    }
    let mut per_slot = vec![ComponentStats::zeros(p); n * p * m];
    let mut resp = vec![0.0; n * p * m];
    let mut moments = ComponentStats::zeros(p);
    moments.mass = 1.0;
    for k in 0..count {
        let w = (log_w[k] - lse).exp();
        if w == 0.0 {
            continue;
        }
        let means = &all_means[k];
        let cp = &cache.passes[k];
        let a = &cache.assignments[k];
        for s in 1..=n {
            let (xs, xq) = (&means[s], &means[s - 1]);
            moments.x.copy_from(xs);
            moments.x_prev.copy_from(xq);
            moments.xx = &cp.smoothed_covs[s] + xs * xs.transpose();
            moments.pp = &cp.smoothed_covs[s - 1] + xq * xq.transpose();
            moments.xp = &cp.cross_covs[s] + xs * xq.transpose();
            for j in 0..p {
                let i = a[(s - 1) * p + j];
                let idx = ((s - 1) * p + j) * m + i;
                per_slot[idx].add_scaled(w, &moments);
                resp[idx] += w;
            }
        }
    }
    Ok(BlockStats {
        log_likelihood: lse,
        per_slot,
        resp,
    })
}

/// Exact E-step. Returns the expected statistics and the observed-data
/// log-likelihood (conditional on the first anchor).
pub fn e_step(theta: &Theta, obs: &ObservationSet, budget: u128) -> Result<(ExpectedStats, f64)> {
    theta.check()?;
    let p = theta.p();
    if obs.p != p {
        return Err(SvarError::Dimension(format!(
            "data has {} series, parameters have {p}",
            obs.p
        )));
    }
    let m = theta.components();
    let c = theta.c()?;
    let caches = obs
        .patterns
        .iter()
        .map(|pat| pattern_cache(theta, &c, &pat.observed, budget))
        .collect::<Result<Vec<_>>>()?;
    let mut comps = vec![ComponentStats::zeros(p); p * m];
    let mut responsibilities = Vec::with_capacity(obs.transitions() * p * m);
    let mut total = 0.0;
    for block in &obs.blocks {
        let bs = block_stats(theta, block, &caches[block.pattern])?;
        total += bs.log_likelihood;
        for s in 0..block.steps() {
            for j in 0..p {
                for i in 0..m {
                    comps[j * m + i].add_scaled(1.0, &bs.per_slot[(s * p + j) * m + i]);
                }
            }
        }
        responsibilities.extend_from_slice(&bs.resp);
    }
    for cs in &mut comps {
        symmetrize(&mut cs.xx);
        symmetrize(&mut cs.pp);
    }
    Ok((
        ExpectedStats {
            p,
            m,
            transitions: obs.transitions(),
            comps,
            responsibilities,
        },
        total,
    ))
}
