use nalgebra::{DMatrix, DVector};

use super::{EmConfig, ExpectedStats, Theta};
use crate::error::{Result, SvarError};
use crate::linalg::{self, LN_2PI};
use crate::model::MixtureSpec;

/// Lower bound on a re-estimated mixture variance.
const VARIANCE_FLOOR: f64 = 1e-10;

/// Relative objective gain below which a Newton step is treated as converged.
const ROUNDOFF_GAIN: f64 = 1e-14;

/// Moments of the structural residual `u_t = x_t - A x_{t-1}` per `(j, i)`:
/// `m = sum E(z u u^T)` and `r = sum E(z u)`.
#[derive(Debug, Clone)]
pub struct ResidualMoments {
    pub m: Vec<DMatrix<f64>>,
    pub r: Vec<DVector<f64>>,
}

pub fn residual_moments(stats: &ExpectedStats, a: &DMatrix<f64>) -> ResidualMoments {
    let at = a.transpose();
    let mut m = Vec::with_capacity(stats.comps.len());
    let mut r = Vec::with_capacity(stats.comps.len());
    for cs in &stats.comps {
        let cross = &cs.xp * &at;
        let mut mm = &cs.xx - &cross - cross.transpose() + a * &cs.pp * &at;
        linalg::symmetrize(&mut mm);
        m.push(mm);
        r.push(&cs.x - a * &cs.x_prev);
    }
    ResidualMoments { m, r }
}

fn quad_row(w: &DMatrix<f64>, j: usize, mm: &DMatrix<f64>) -> f64 {
    let row = w.row(j);
    (row * mm * row.transpose())[(0, 0)]
}

fn lin_row(w: &DMatrix<f64>, j: usize, r: &DVector<f64>) -> f64 {
    (w.row(j) * r)[(0, 0)]
}

fn objective_with(theta: &Theta, w: &DMatrix<f64>, stats: &ExpectedStats, res: &ResidualMoments) -> Result<f64> {
    let p = theta.p();
    let m = stats.m;
    let mut q = stats.transitions as f64 * linalg::log_abs_det(w)?;
    for j in 0..p {
        let spec = &theta.shocks[j];
        for i in 0..m {
            let k = j * m + i;
            let mass = stats.comps[k].mass;
            let (mu, var) = (spec.means[i], spec.variances[i]);
            let quad = quad_row(w, j, &res.m[k]) - 2.0 * mu * lin_row(w, j, &res.r[k]) + mu * mu * mass;
            let prior = if mass > 0.0 {
                mass * (spec.weights[i].ln() - 0.5 * (LN_2PI + var.ln()))
            } else {
                0.0
            };
            q += prior - quad / (2.0 * var);
        }
    }
    Ok(q)
}

/// Expected complete-data log-likelihood `E[log p(X, z | theta) | data]`.
pub fn expected_complete_log_likelihood(theta: &Theta, stats: &ExpectedStats) -> Result<f64> {
    let res = residual_moments(stats, &theta.a);
    objective_with(theta, &theta.w, stats, &res)
}

fn gradient_with(theta: &Theta, w: &DMatrix<f64>, stats: &ExpectedStats, res: &ResidualMoments) -> Result<DMatrix<f64>> {
    let p = theta.p();
    let m = stats.m;
    let winv = linalg::inverse(w)?;
    let mut g = winv.transpose() * stats.transitions as f64;
    for j in 0..p {
        let spec = &theta.shocks[j];
        for i in 0..m {
            let k = j * m + i;
            let (mu, var) = (spec.means[i], spec.variances[i]);
            let row = (&res.m[k] * w.row(j).transpose() - &res.r[k] * mu) / var;
            for b in 0..p {
                g[(j, b)] -= row[b];
            }
        }
    }
    Ok(g)
}

fn hessian_with(theta: &Theta, w: &DMatrix<f64>, stats: &ExpectedStats, res: &ResidualMoments) -> Result<DMatrix<f64>> {
    let p = theta.p();
    let m = stats.m;
    let winv = linalg::inverse(w)?;
    let t = stats.transitions as f64;
    let idx = |a: usize, b: usize| a + b * p;
    let mut h = DMatrix::zeros(p * p, p * p);
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                for d in 0..p {
                    h[(idx(a, b), idx(c, d))] = -t * winv[(b, c)] * winv[(d, a)];
                }
            }
        }
    }
    for j in 0..p {
        let spec = &theta.shocks[j];
        for i in 0..m {
            let k = j * m + i;
            let var = spec.variances[i];
            for b in 0..p {
                for d in 0..p {
                    h[(idx(j, b), idx(j, d))] -= res.m[k][(b, d)] / var;
                }
            }
        }
    }
    Ok(h)
}

/// Gradient of the expected complete log-likelihood with respect to `W`.
pub fn w_gradient(theta: &Theta, stats: &ExpectedStats) -> Result<DMatrix<f64>> {
    let res = residual_moments(stats, &theta.a);
    gradient_with(theta, &theta.w, stats, &res)
}

/// Hessian with respect to the column-major `vec(W)`.
pub fn w_hessian(theta: &Theta, stats: &ExpectedStats) -> Result<DMatrix<f64>> {
    let res = residual_moments(stats, &theta.a);
    hessian_with(theta, &theta.w, stats, &res)
}

/// Closed-form `A` update. For each row `j` the maximiser of the expected
/// log-likelihood in `B = W A` is
/// `B_j^T = (sum_i pp_ji / s_ji)^{-1} sum_i (xp_ji^T W_j^T - mu_ji x_prev_ji) / s_ji`,
/// and `A = C B`.
pub fn m_step_a(stats: &ExpectedStats, theta: &Theta) -> Result<DMatrix<f64>> {
    let p = theta.p();
    let m = stats.m;
    let mut b = DMatrix::zeros(p, p);
    for j in 0..p {
        let spec = &theta.shocks[j];
        let wj = theta.w.row(j).transpose();
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for i in 0..m {
            let cs = stats.comp(j, i);
            let var = spec.variances[i];
            gram += &cs.pp / var;
            rhs += (cs.xp.transpose() * &wj - &cs.x_prev * spec.means[i]) / var;
        }
        let sol = gram
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| gram.lu().solve(&rhs))
            .ok_or_else(|| SvarError::numerical(format!("singular weighted Gram matrix for row {j}")))?;
        b.row_mut(j).copy_from(&sol.transpose());
    }
    Ok(theta.c()? * b)
}

#[derive(Debug, Clone, Copy)]
pub struct MixtureOptions {
    pub zero_means: bool,
    /// Keep components with negligible mass at their current values instead
    /// of failing.
    pub hold_degenerate: bool,
    pub degenerate_mass: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            zero_means: false,
            hold_degenerate: false,
            degenerate_mass: 1e-8,
        }
    }
}

/// Closed-form update of means, variances and weights, followed by the
/// rescaling to unit first-component variance when `theta.scale_fixed`.
pub fn m_step_mixture(stats: &ExpectedStats, theta: &Theta, opts: MixtureOptions) -> Result<Theta> {
    let p = theta.p();
    let m = stats.m;
    let res = residual_moments(stats, &theta.a);
    let mut out = theta.clone();
    for j in 0..p {
        let old = &theta.shocks[j];
        let mut spec = old.clone();
        let mut held = vec![false; m];
        for i in 0..m {
            let k = j * m + i;
            let mass = stats.comps[k].mass;
            if mass < opts.degenerate_mass {
                if opts.hold_degenerate {
                    held[i] = true;
                    continue;
                }
                return Err(SvarError::DegenerateComponent {
                    series: j,
                    component: i,
                    mass,
                });
            }
            let lin = lin_row(&theta.w, j, &res.r[k]);
            let mu = if opts.zero_means { 0.0 } else { lin / mass };
            let var = (quad_row(&theta.w, j, &res.m[k]) - 2.0 * mu * lin + mu * mu * mass) / mass;
            spec.means[i] = mu;
            spec.variances[i] = var.max(VARIANCE_FLOOR);
        }
        let held_weight: f64 = (0..m).filter(|&i| held[i]).map(|i| old.weights[i]).sum();
        let free_mass: f64 = (0..m).filter(|&i| !held[i]).map(|i| stats.comps[j * m + i].mass).sum();
        for i in (0..m).filter(|&i| !held[i]) {
            spec.weights[i] = (1.0 - held_weight) * stats.comps[j * m + i].mass / free_mass;
        }
        out.shocks[j] = MixtureSpec { ..spec };
    }
    if out.scale_fixed {
        out.fix_scale();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct WUpdate {
    pub w: DMatrix<f64>,
    pub steps: usize,
    /// Line search failed before the gradient tolerance was met.
    pub stalled: bool,
}

/// Damped Newton-Raphson maximisation of the expected log-likelihood in
/// `W` over the entries left free by the structural constraint. Never
/// returns a `W` with a lower objective than the input.
pub fn m_step_w(theta: &Theta, stats: &ExpectedStats, config: &EmConfig) -> Result<WUpdate> {
    let p = theta.p();
    let Some(free) = config.constraint.free_w_entries(p)? else {
        return Ok(WUpdate {
            w: theta.w.clone(),
            steps: 0,
            stalled: false,
        });
    };
    let free_idx: Vec<usize> = (0..p * p).filter(|&n| free[n]).collect();
    let res = residual_moments(stats, &theta.a);
    let tol = config.newton_tolerance * (stats.transitions.max(1) as f64);
    let mut w = theta.w.clone();
    let mut obj = objective_with(theta, &w, stats, &res)?;
    let mut steps = 0;
    let mut stalled = false;
    while steps < config.newton_max_steps {
        let g = gradient_with(theta, &w, stats, &res)?;
        let gf = DVector::from_iterator(free_idx.len(), free_idx.iter().map(|&n| g[n]));
        if gf.amax() <= tol {
            break;
        }
        let h = hessian_with(theta, &w, stats, &res)?;
        let neg_h = DMatrix::from_fn(free_idx.len(), free_idx.len(), |u, v| -h[(free_idx[u], free_idx[v])]);
        let newton = neg_h.cholesky().map(|ch| ch.solve(&gf));
        if let Some(dir) = &newton {
            // Predicted gain already at rounding level of the objective.
            if 0.5 * gf.dot(dir) <= ROUNDOFF_GAIN * obj.abs().max(1.0) {
                break;
            }
        }
        let mut accepted = false;
        for dir in newton.iter().chain(std::iter::once(&gf)) {
            if let Some((w_new, obj_new)) = line_search(theta, &w, obj, dir, &free_idx, stats, &res) {
                w = w_new;
                obj = obj_new;
                accepted = true;
                break;
            }
        }
        steps += 1;
        if !accepted {
            stalled = true;
            break;
        }
    }
    Ok(WUpdate { w, steps, stalled })
}

fn line_search(
    theta: &Theta,
    w: &DMatrix<f64>,
    obj: f64,
    dir: &DVector<f64>,
    free_idx: &[usize],
    stats: &ExpectedStats,
    res: &ResidualMoments,
) -> Option<(DMatrix<f64>, f64)> {
    let mut alpha = 1.0;
    for _ in 0..40 {
        let mut cand = w.clone();
        for (u, &n) in free_idx.iter().enumerate() {
            cand[n] += alpha * dir[u];
        }
        if let Ok(v) = objective_with(theta, &cand, stats, res) {
            if v.is_finite() && v > obj {
                return Some((cand, v));
            }
        }
        alpha *= 0.5;
    }
    None
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MStepInfo {
    pub w_stalled: bool,
}

/// One full M-step: coordinate cycles through `A`, `W` and the mixtures.
pub fn m_step(theta: &Theta, stats: &ExpectedStats, config: &EmConfig) -> Result<(Theta, MStepInfo)> {
    let opts = MixtureOptions {
        zero_means: config.zero_means,
        hold_degenerate: true,
        degenerate_mass: config.degenerate_mass,
    };
    let mut info = MStepInfo::default();
    let mut cur = theta.clone();
    let mut prev = expected_complete_log_likelihood(&cur, stats)?;
    for _ in 0..config.inner_cycles.max(1) {
        cur.a = m_step_a(stats, &cur)?;
        let wu = m_step_w(&cur, stats, config)?;
        info.w_stalled |= wu.stalled;
        cur.w = wu.w;
        cur = m_step_mixture(stats, &cur, opts)?;
        let q = expected_complete_log_likelihood(&cur, stats)?;
        let done = (q - prev).abs() <= config.inner_tolerance * prev.abs().max(1.0);
        prev = q;
        if done {
            break;
        }
    }
    Ok((cur, info))
}
