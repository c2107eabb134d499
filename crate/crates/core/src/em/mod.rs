//! Exact EM estimation of `(A, W = C^{-1}, mu, sigma^2, pi)` from an
//! observation set.
//!
//! The E-step enumerates every mixture assignment of the shocks inside a
//! block and runs the conditional Kalman smoother for each; the M-step cycles
//! through closed-form updates of `A` and the mixtures and a Newton-Raphson
//! update of `W`.

mod estep;
mod fit;
mod mstep;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvarError};
use crate::linalg;
use crate::model::{MixtureSpec, SvarModel};

pub use estep::{
    e_step, enumerate_assignments, Assignments, ComponentStats, ExpectedStats,
    DEFAULT_ASSIGNMENT_BUDGET,
};
pub use fit::{em_fit, initialize, multi_start_fit, multi_start_fit_with, restart_rng, FitResult, RestartSummary};
pub use mstep::{
    expected_complete_log_likelihood, m_step, m_step_a, m_step_mixture, m_step_w,
    residual_moments, w_gradient, w_hessian, MStepInfo, MixtureOptions, ResidualMoments, WUpdate,
};

/// Restriction placed on the structural matrix `C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Free,
    /// `C = I`; shock variances are then all free.
    Identity,
    /// `mask[i][j]` is true where `C_ij` may be nonzero. The pattern must
    /// contain the diagonal and be transitively closed, so that `W = C^{-1}`
    /// shares it.
    ZeroPattern(Vec<Vec<bool>>),
}

impl Constraint {
    /// Lower-triangular pattern (series `i` instantaneously driven by `j < i`).
    pub fn lower_triangular(p: usize) -> Self {
        Constraint::ZeroPattern((0..p).map(|i| (0..p).map(|j| j <= i).collect()).collect())
    }

    pub fn upper_triangular(p: usize) -> Self {
        Constraint::ZeroPattern((0..p).map(|i| (0..p).map(|j| j >= i).collect()).collect())
    }

    pub fn diagonal(p: usize) -> Self {
        Constraint::ZeroPattern((0..p).map(|i| (0..p).map(|j| j == i).collect()).collect())
    }

    /// Whether the first mixture variance of each shock is pinned to one.
    pub fn scale_fixed(&self) -> bool {
        !matches!(self, Constraint::Identity)
    }

    /// Free entries of `W` in column-major `vec` order, or `None` when `W`
    /// is not estimated.
    pub fn free_w_entries(&self, p: usize) -> Result<Option<Vec<bool>>> {
        match self {
            Constraint::Free => Ok(Some(vec![true; p * p])),
            Constraint::Identity => Ok(None),
            Constraint::ZeroPattern(mask) => {
                self.check(p)?;
                let mut free = vec![false; p * p];
                for i in 0..p {
                    for j in 0..p {
                        free[i + j * p] = mask[i][j];
                    }
                }
                Ok(Some(free))
            }
        }
    }

    pub fn check(&self, p: usize) -> Result<()> {
        let Constraint::ZeroPattern(mask) = self else {
            return Ok(());
        };
        if mask.len() != p || mask.iter().any(|r| r.len() != p) {
            return Err(SvarError::Dimension(format!("zero pattern must be {p}x{p}")));
        }
        if (0..p).any(|i| !mask[i][i]) {
            return Err(SvarError::Argument("zero pattern must keep the diagonal free".into()));
        }
        // Closed under composition: i <- k <- j implies i <- j.
        for i in 0..p {
            for k in 0..p {
                if !mask[i][k] {
                    continue;
                }
                for j in 0..p {
                    if mask[k][j] && !mask[i][j] {
                        return Err(SvarError::Argument(format!(
                            "zero pattern is not transitively closed: ({i},{k}) and ({k},{j}) free but ({i},{j}) fixed"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of free entries of `C`.
    pub fn free_c_entries(&self, p: usize) -> usize {
        match self {
            Constraint::Free => p * p,
            Constraint::Identity => 0,
            Constraint::ZeroPattern(mask) => mask.iter().flatten().filter(|&&b| b).count(),
        }
    }

    /// Whether every model allowed by `self` is also allowed by `other`.
    pub fn nested_in(&self, other: &Constraint, p: usize) -> bool {
        let pattern = |c: &Constraint| -> Vec<bool> {
            match c {
                Constraint::Free => vec![true; p * p],
                Constraint::Identity => (0..p * p).map(|n| n % (p + 1) == 0).collect(),
                Constraint::ZeroPattern(m) => m.iter().flatten().cloned().collect(),
            }
        };
        let (a, b) = (pattern(self), pattern(other));
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| !x || *y)
    }
}

/// EM settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub components: usize,
    pub constraint: Constraint,
    /// Fix all mixture means at zero.
    pub zero_means: bool,
    pub max_iterations: usize,
    /// Stop when the relative change of the observed log-likelihood is below this.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Enables adaptive over-relaxation.
    pub over_relaxation: bool,
    pub eta_growth: f64,
    /// Gradient tolerance of the `W` Newton iterations, per transition.
    pub newton_tolerance: f64,
    pub newton_max_steps: usize,
    pub inner_cycles: usize,
    pub inner_tolerance: f64,
    /// Allowed decrease of the observed log-likelihood between accepted iterates.
    pub ascent_slack: f64,
    pub assignment_budget: u128,
    /// Responsibility mass below which a component counts as empty.
    pub degenerate_mass: f64,
    pub record_timings: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            components: 2,
            constraint: Constraint::Free,
            zero_means: false,
            max_iterations: 1000,
            tolerance: 1e-6,
            restarts: 50,
            seed: 0,
            over_relaxation: true,
            eta_growth: 1.1,
            newton_tolerance: 1e-9,
            newton_max_steps: 50,
            inner_cycles: 5,
            inner_tolerance: 1e-8,
            ascent_slack: 1e-9,
            assignment_budget: DEFAULT_ASSIGNMENT_BUDGET,
            degenerate_mass: 1e-8,
            record_timings: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tolerance", self.tolerance),
            ("newton_tolerance", self.newton_tolerance),
            ("inner_tolerance", self.inner_tolerance),
            ("eta_growth", self.eta_growth),
            ("degenerate_mass", self.degenerate_mass),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SvarError::Argument(format!("{name} must be positive")));
            }
        }
        if !(self.ascent_slack >= 0.0) {
            return Err(SvarError::Argument("ascent_slack must be non-negative".into()));
        }
        if self.components == 0 {
            return Err(SvarError::Argument("need at least one mixture component".into()));
        }
        if self.restarts == 0 {
            return Err(SvarError::Argument("need at least one restart".into()));
        }
        Ok(())
    }
}

/// Parameters being estimated. `C = W^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub a: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub shocks: Vec<MixtureSpec>,
    pub scale_fixed: bool,
}

#[derive(Serialize, Deserialize)]
struct ThetaFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "C", default, skip_deserializing)]
    c: Option<Vec<Vec<f64>>>,
    shocks: Vec<MixtureSpec>,
    scale_fixed: bool,
}

impl Serialize for Theta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ThetaFile {
            a: linalg::to_rows(&self.a),
            w: linalg::to_rows(&self.w),
            c: self.c().ok().map(|c| linalg::to_rows(&c)),
            shocks: self.shocks.clone(),
            scale_fixed: self.scale_fixed,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ThetaFile::deserialize(d)?;
        Ok(Theta {
            a: linalg::from_rows(&f.a).map_err(serde::de::Error::custom)?,
            w: linalg::from_rows(&f.w).map_err(serde::de::Error::custom)?,
            shocks: f.shocks,
            scale_fixed: f.scale_fixed,
        })
    }
}

impl Theta {
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn components(&self) -> usize {
        self.shocks.first().map_or(0, MixtureSpec::components)
    }

    pub fn c(&self) -> Result<DMatrix<f64>> {
        linalg::inverse(&self.w)
    }

    pub fn to_model(&self) -> Result<SvarModel> {
        Ok(SvarModel {
            a: self.a.clone(),
            c: self.c()?,
            shocks: self.shocks.clone(),
        })
    }

    /// Parameters of a generating model, rescaled to the estimation
    /// convention when `scale_fixed` is set.
    pub fn from_model(model: &SvarModel, scale_fixed: bool) -> Result<Self> {
        let mut theta = Theta {
            a: model.a.clone(),
            w: linalg::inverse(&model.c)?,
            shocks: model.shocks.clone(),
            scale_fixed,
        };
        if scale_fixed {
            theta.fix_scale();
        }
        Ok(theta)
    }

    /// Rescales shock `j` by `1 / sigma_{j1}` (row `j` of `W` accordingly) so
    /// the first component has unit variance. Leaves the likelihood unchanged.
    pub fn fix_scale(&mut self) {
        for j in 0..self.p() {
            let s = self.shocks[j].variances[0].sqrt();
            if s == 1.0 {
                continue;
            }
            self.shocks[j] = self.shocks[j].scaled(1.0 / s);
            self.shocks[j].variances[0] = 1.0;
            let mut row = self.w.row_mut(j);
            row /= s;
        }
    }

    pub fn check(&self) -> Result<()> {
        let p = self.p();
        if self.a.shape() != (p, p) || self.w.shape() != (p, p) || self.shocks.len() != p {
            return Err(SvarError::Dimension("inconsistent parameter dimensions".into()));
        }
        let m = self.components();
        for s in &self.shocks {
            if s.components() != m {
                return Err(SvarError::Dimension("shocks differ in component count".into()));
            }
            if s.weights.iter().any(|w| !(*w >= 0.0))
                || (s.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(SvarError::Argument("mixture weights must form a probability vector".into()));
            }
            if s.variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(SvarError::Argument("mixture variances must be positive".into()));
            }
            if self.scale_fixed && s.variances[0] != 1.0 {
                return Err(SvarError::Argument("first mixture variance must equal one".into()));
            }
        }
        if self.a.iter().chain(self.w.iter()).any(|v| !v.is_finite()) {
            return Err(SvarError::Numerical {
                time: None,
                message: "non-finite parameter".into(),
            });
        }
        linalg::log_abs_det(&self.w).map(|_| ())
    }
}
