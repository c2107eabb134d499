//! Conditional linear-Gaussian state-space model of one block.
//!
//! With the mixture assignment of every shock in a block held fixed, the
//! latent states between two fully observed anchors follow
//! `x_s = A x_{s-1} + b_s + w_s`, `w_s ~ N(0, Q_s)`, and the observations
//! are exact copies of selected state components. The filter is split in a
//! data-free covariance pass and a mean pass so that the E-step can share
//! covariance work between blocks with the same observation pattern.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SvarError};
use crate::linalg::{self, spd_inverse_logdet, symmetrize, LN_2PI};
use crate::model::SvarModel;
use crate::sampling::Block;

/// Block model for a fixed assignment. Step `s` runs from `1` to `n`; index
/// `s - 1` of the per-step vectors belongs to step `s`.
#[derive(Debug, Clone)]
pub struct ConditionalSsm {
    pub a: DMatrix<f64>,
    /// `C mu_{., z_s}` per step.
    pub shock_mean: Vec<DVector<f64>>,
    /// `C diag(sigma^2_{., z_s}) C^T` per step.
    pub shock_cov: Vec<DMatrix<f64>>,
    /// Observed series at states `0..=n`; state 0 is the anchor.
    pub observed: Vec<Vec<usize>>,
    pub x0: DVector<f64>,
}

impl ConditionalSsm {
    pub fn steps(&self) -> usize {
        self.shock_mean.len()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }
}

/// Smoothed first and second moments of a block. Vectors are indexed by
/// state `0..=n`; `cross[s]` is `Cov(x_s, x_{s-1} | data)` (zero at `s = 0`).
#[derive(Debug, Clone)]
pub struct SmoothedMoments {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub cross: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Builds the block model for `assignment`, laid out as
/// `assignment[(s - 1) * p + j]` = component of shock `j` at step `s`.
pub fn build_ssm(model: &SvarModel, block: &Block, assignment: &[usize]) -> Result<ConditionalSsm> {
    let p = model.p();
    let n = block.steps();
    if assignment.len() != n * p {
        return Err(SvarError::Argument(format!(
            "assignment has {} slots, block needs {}",
            assignment.len(),
            n * p
        )));
    }
    if block.values[0].len() != p {
        return Err(SvarError::Argument("block anchor is not fully observed".into()));
    }
    let mut shock_mean = Vec::with_capacity(n);
    let mut shock_cov = Vec::with_capacity(n);
    for s in 0..n {
        let slots = &assignment[s * p..(s + 1) * p];
        let mut mu = DVector::zeros(p);
        let mut var = DVector::zeros(p);
        for (j, &i) in slots.iter().enumerate() {
            let spec = &model.shocks[j];
            if i >= spec.components() {
                return Err(SvarError::Argument(format!(
                    "component {i} out of range for series {j} with {} components",
                    spec.components()
                )));
            }
            mu[j] = spec.means[i];
            var[j] = spec.variances[i];
        }
        shock_mean.push(&model.c * mu);
        let mut q = &model.c * DMatrix::from_diagonal(&var) * model.c.transpose();
        symmetrize(&mut q);
        shock_cov.push(q);
    }
    Ok(ConditionalSsm {
        a: model.a.clone(),
        shock_mean,
        shock_cov,
        observed: block.observed.clone(),
        x0: DVector::from_column_slice(block.anchor()),
    })
}

/// Data-independent part of the filter and smoother.
#[derive(Debug, Clone)]
pub struct CovariancePass {
    /// Gain `K_s` per state (`None` when nothing is observed).
    gains: Vec<Option<DMatrix<f64>>>,
    innovation_inv: Vec<Option<DMatrix<f64>>>,
    /// Sum over states of `log det S_s + |o_s| log 2 pi`.
    log_norm: f64,
    /// Smoother gain `J_s` for states `0..n`.
    smoother_gains: Vec<DMatrix<f64>>,
    pub smoothed_covs: Vec<DMatrix<f64>>,
    pub cross_covs: Vec<DMatrix<f64>>,
}

pub fn covariance_pass(
    a: &DMatrix<f64>,
    shock_cov: &[DMatrix<f64>],
    observed: &[Vec<usize>],
) -> Result<CovariancePass> {
    let p = a.nrows();
    let n = shock_cov.len();
    if observed.len() != n + 1 {
        return Err(SvarError::Dimension(format!(
            "{} observation sets for {} steps",
            observed.len(),
            n
        )));
    }
    let eye = DMatrix::<f64>::identity(p, p);
    let mut filt = Vec::with_capacity(n + 1);
    let mut pred = Vec::with_capacity(n + 1);
    let mut gains = Vec::with_capacity(n + 1);
    let mut innovation_inv = Vec::with_capacity(n + 1);
    let mut log_norm = 0.0;
    filt.push(DMatrix::zeros(p, p));
    pred.push(DMatrix::zeros(p, p));
    gains.push(None);
    innovation_inv.push(None);
    for s in 1..=n {
        let mut pp = a * &filt[s - 1] * a.transpose() + &shock_cov[s - 1];
        symmetrize(&mut pp);
        let obs = &observed[s];
        if obs.is_empty() {
            filt.push(pp.clone());
            pred.push(pp);
            gains.push(None);
            innovation_inv.push(None);
            continue;
        }
        let r = obs.len();
        let s_mat = DMatrix::from_fn(r, r, |u, v| pp[(obs[u], obs[v])]);
        let (s_inv, logdet) = spd_inverse_logdet(&s_mat)
            .ok_or_else(|| SvarError::numerical_at(s, "singular innovation covariance"))?;
        let ph = DMatrix::from_fn(p, r, |u, v| pp[(u, obs[v])]);
        let k = &ph * &s_inv;
        // Joseph form with zero observation noise.
        let mut kh = DMatrix::zeros(p, p);
        for (v, &j) in obs.iter().enumerate() {
            kh.column_mut(j).copy_from(&k.column(v));
        }
        let ikh = &eye - kh;
        let mut pf = &ikh * &pp * ikh.transpose();
        for &j in obs {
            pf.row_mut(j).fill(0.0);
            pf.column_mut(j).fill(0.0);
        }
        symmetrize(&mut pf);
        log_norm += logdet + r as f64 * LN_2PI;
        filt.push(pf);
        pred.push(pp);
        gains.push(Some(k));
        innovation_inv.push(Some(s_inv));
    }

    let mut smoother_gains = vec![DMatrix::zeros(p, p); n];
    let mut smoothed = vec![DMatrix::zeros(p, p); n + 1];
    let mut cross = vec![DMatrix::zeros(p, p); n + 1];
    smoothed[n] = filt[n].clone();
    for s in (0..n).rev() {
        let j = if s == 0 {
            DMatrix::zeros(p, p)
        } else {
            let (pred_inv, _) = spd_inverse_logdet(&pred[s + 1]).ok_or_else(|| {
                SvarError::numerical_at(s + 1, "singular predicted covariance in smoother")
            })?;
            &filt[s] * a.transpose() * pred_inv
        };
        let mut v = &filt[s] + &j * (&smoothed[s + 1] - &pred[s + 1]) * j.transpose();
        symmetrize(&mut v);
        cross[s + 1] = &smoothed[s + 1] * j.transpose();
        smoothed[s] = v;
        smoother_gains[s] = j;
    }
    // Exactly observed components carry no posterior uncertainty.
    for (s, obs) in observed.iter().enumerate() {
        for &j in obs {
            smoothed[s].row_mut(j).fill(0.0);
            smoothed[s].column_mut(j).fill(0.0);
            cross[s].row_mut(j).fill(0.0);
            if s + 1 <= n {
                cross[s + 1].column_mut(j).fill(0.0);
            }
        }
    }
    Ok(CovariancePass {
        gains,
        innovation_inv,
        log_norm,
        smoother_gains,
        smoothed_covs: smoothed,
        cross_covs: cross,
    })
}

/// Smoothed means and block log-likelihood for one data realisation.
pub fn mean_pass(
    cp: &CovariancePass,
    a: &DMatrix<f64>,
    shock_mean: &[DVector<f64>],
    observed: &[Vec<usize>],
    values: &[Vec<f64>],
    x0: &DVector<f64>,
) -> (Vec<DVector<f64>>, f64) {
    let n = shock_mean.len();
    let mut filt: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    let mut pred: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    filt.push(x0.clone());
    pred.push(x0.clone());
    let mut quad = 0.0;
    for s in 1..=n {
        let mp = a * &filt[s - 1] + &shock_mean[s - 1];
        let obs = &observed[s];
        let mut mf = mp.clone();
        if let (Some(k), Some(s_inv)) = (&cp.gains[s], &cp.innovation_inv[s]) {
            let innov = DVector::from_iterator(
                obs.len(),
                obs.iter().zip(&values[s]).map(|(&j, &y)| y - mp[j]),
            );
            quad += innov.dot(&(s_inv * &innov));
            mf += k * innov;
            for (&j, &y) in obs.iter().zip(&values[s]) {
                mf[j] = y;
            }
        }
        filt.push(mf);
        pred.push(mp);
    }
    let mut smoothed = filt.clone();
    for s in (1..n).rev() {
        let upd = &filt[s] + &cp.smoother_gains[s] * (&smoothed[s + 1] - &pred[s + 1]);
        let mut upd = upd;
        for (&j, &y) in observed[s].iter().zip(&values[s]) {
            upd[j] = y;
        }
        smoothed[s] = upd;
    }
    (smoothed, -0.5 * (cp.log_norm + quad))
}

/// Forward filter, fixed-interval smoother and lag-one covariance smoother.
pub fn filter_smooth(ssm: &ConditionalSsm, block: &Block) -> Result<SmoothedMoments> {
    check_consistent(ssm, block)?;
    let cp = covariance_pass(&ssm.a, &ssm.shock_cov, &ssm.observed)?;
    let (means, ll) = mean_pass(&cp, &ssm.a, &ssm.shock_mean, &ssm.observed, &block.values, &ssm.x0);
    Ok(SmoothedMoments {
        means,
        covs: cp.smoothed_covs,
        cross: cp.cross_covs,
        log_likelihood: ll,
    })
}

fn check_consistent(ssm: &ConditionalSsm, block: &Block) -> Result<()> {
    if ssm.steps() != block.steps() || ssm.observed != block.observed {
        return Err(SvarError::Dimension("state-space model does not match block".into()));
    }
    if ssm.shock_cov.len() != ssm.steps() {
        return Err(SvarError::Dimension("shock covariances do not cover every step".into()));
    }
    Ok(())
}

/// Independent reference: unrolls the recursion into one joint Gaussian over
/// all block states and conditions on the observed entries by Schur
/// complement. Intended for small blocks.
pub fn gaussian_condition_oracle(ssm: &ConditionalSsm, block: &Block) -> Result<SmoothedMoments> {
    check_consistent(ssm, block)?;
    let p = ssm.p();
    let n = ssm.steps();
    let dim = n * p;
    // Prior means and covariances of x_1..x_n given x_0.
    let mut mean = DVector::zeros(dim);
    let mut cov = DMatrix::zeros(dim, dim);
    let mut prev_mean = ssm.x0.clone();
    let mut prev_var = DMatrix::<f64>::zeros(p, p);
    for s in 0..n {
        let m = &ssm.a * &prev_mean + &ssm.shock_mean[s];
        let v = &ssm.a * &prev_var * ssm.a.transpose() + &ssm.shock_cov[s];
        mean.rows_mut(s * p, p).copy_from(&m);
        cov.view_mut((s * p, s * p), (p, p)).copy_from(&v);
        // Cov(x_s, x_r) = A^{s-r} Var(x_r) for r < s.
        let mut prop = ssm.a.clone();
        for r in (0..s).rev() {
            let var_r = cov.view((r * p, r * p), (p, p)).into_owned();
            let c = &prop * var_r;
            cov.view_mut((s * p, r * p), (p, p)).copy_from(&c);
            cov.view_mut((r * p, s * p), (p, p)).copy_from(&c.transpose());
            prop = &prop * &ssm.a;
        }
        prev_mean = m;
        prev_var = v;
    }
    let mut obs_idx = Vec::new();
    let mut obs_val = Vec::new();
    for s in 1..=n {
        for (&j, &y) in ssm.observed[s].iter().zip(&block.values[s]) {
            obs_idx.push((s - 1) * p + j);
            obs_val.push(y);
        }
    }
    let hid_idx: Vec<usize> = (0..dim).filter(|i| !obs_idx.contains(i)).collect();
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |u, v| cov[(rows[u], cols[v])])
    };
    let s_oo = sub(&obs_idx, &obs_idx);
    let y = DVector::from_vec(obs_val.clone());
    let mu_o = DVector::from_iterator(obs_idx.len(), obs_idx.iter().map(|&i| mean[i]));
    let ll = if obs_idx.is_empty() {
        0.0
    } else {
        linalg::gaussian_log_density(&y, &mu_o, &s_oo).map_err(|_| {
            SvarError::numerical("joint covariance of observed entries is singular")
        })?
    };
    let mut post_mean = mean.clone();
    let mut post_cov = DMatrix::zeros(dim, dim);
    if obs_idx.is_empty() {
        post_cov = cov.clone();
    } else {
        let (s_inv, _) = spd_inverse_logdet(&s_oo)
            .ok_or_else(|| SvarError::numerical("joint covariance of observed entries is singular"))?;
        let s_ho = sub(&hid_idx, &obs_idx);
        let s_hh = sub(&hid_idx, &hid_idx);
        let gain = &s_ho * &s_inv;
        let m_h = DVector::from_iterator(hid_idx.len(), hid_idx.iter().map(|&i| mean[i]))
            + &gain * (&y - &mu_o);
        let v_h = s_hh - &gain * s_ho.transpose();
        for (u, &i) in hid_idx.iter().enumerate() {
            post_mean[i] = m_h[u];
            for (v, &k) in hid_idx.iter().enumerate() {
                post_cov[(i, k)] = v_h[(u, v)];
            }
        }
        for (u, &i) in obs_idx.iter().enumerate() {
            post_mean[i] = obs_val[u];
        }
    }
    let mut means = vec![ssm.x0.clone()];
    let mut covs = vec![DMatrix::zeros(p, p)];
    let mut cross = vec![DMatrix::zeros(p, p)];
    for s in 1..=n {
        let o = (s - 1) * p;
        means.push(post_mean.rows(o, p).into_owned());
        let mut v = post_cov.view((o, o), (p, p)).into_owned();
        symmetrize(&mut v);
        covs.push(v);
        cross.push(if s == 1 {
            DMatrix::zeros(p, p)
        } else {
            post_cov.view((o, o - p), (p, p)).into_owned()
        });
    }
    Ok(SmoothedMoments {
        means,
        covs,
        cross,
        log_likelihood: ll,
    })
}
