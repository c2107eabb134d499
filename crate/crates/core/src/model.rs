//! SVAR(1) model types, simulation and the stacked representations of the
//! process seen through subsampling or mixed-frequency observation.
//!
//! The generative model is `x_t = A x_{t-1} + C e_t` where each shock
//! `e_tj` is an independent draw from a univariate Gaussian mixture.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvarError};
use crate::linalg::{self, kron, matrix_power, numerical_rank, spectral_radius};
use crate::sampling::SamplingScheme;

/// Steps discarded before recording a stationary simulation.
pub const BURN_IN: usize = 200;

/// Half-width of the band around modulus one reported as a stationarity boundary.
pub const STATIONARITY_TOL: f64 = 1e-10;

/// Gaussian-mixture distribution of one structural shock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let spec = MixtureSpec {
            weights,
            means,
            variances,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Single standard normal component.
    pub fn standard_normal() -> Self {
        MixtureSpec {
            weights: vec![1.0],
            means: vec![0.0],
            variances: vec![1.0],
        }
    }

    pub fn check(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.means.len() != m || self.variances.len() != m {
            return Err(SvarError::Dimension(format!(
                "mixture with {} weights, {} means, {} variances",
                m,
                self.means.len(),
                self.variances.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(SvarError::Argument("mixture weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SvarError::Argument(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if self.variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(SvarError::Argument("mixture variances must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(SvarError::Argument("mixture means must be finite".into()));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// True when the first component has unit variance (estimation scale).
    pub fn is_canonical_scale(&self) -> bool {
        self.variances.first() == Some(&1.0)
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| w * (v + m * m))
            .sum();
        second - mean * mean
    }

    pub fn third_central_moment(&self) -> f64 {
        let mean = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| {
                let d = m - mean;
                w * (d * d * d + 3.0 * d * v)
            })
            .sum()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|i| {
                let d = x - self.means[i];
                self.weights[i].ln()
                    - 0.5 * (linalg::LN_2PI + self.variances[i].ln() + d * d / self.variances[i])
            })
            .collect();
        linalg::logsumexp(&terms)
    }

    /// Distribution of `s * e` for `e` drawn from this mixture.
    pub fn scaled(&self, s: f64) -> Self {
        MixtureSpec {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m * s).collect(),
            variances: self.variances.iter().map(|v| v * s * s).collect(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        (comp, self.means[comp] + self.variances[comp].sqrt() * z)
    }
}

/// SVAR(1) with mixture shocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SvarModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub shocks: Vec<MixtureSpec>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    p: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    shocks: Vec<MixtureSpec>,
}

impl Serialize for SvarModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelFile {
            p: self.p(),
            a: linalg::to_rows(&self.a),
            c: linalg::to_rows(&self.c),
            shocks: self.shocks.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SvarModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ModelFile::deserialize(d)?;
        let a = linalg::from_rows(&f.a).map_err(serde::de::Error::custom)?;
        let c = linalg::from_rows(&f.c).map_err(serde::de::Error::custom)?;
        let model = SvarModel {
            a,
            c,
            shocks: f.shocks,
        };
        if model.p() != f.p {
            return Err(serde::de::Error::custom(format!(
                "declared p = {} but A is {}x{}",
                f.p,
                model.a.nrows(),
                model.a.ncols()
            )));
        }
        model.check_dimensions().map_err(serde::de::Error::custom)?;
        Ok(model)
    }
}

impl SvarModel {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, shocks: Vec<MixtureSpec>) -> Result<Self> {
        let model = SvarModel { a, c, shocks };
        model.check_dimensions()?;
        for s in &model.shocks {
            s.check()?;
        }
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let p = self.a.nrows();
        if self.a.ncols() != p {
            return Err(SvarError::Dimension(format!(
                "A is {}x{}, expected square",
                p,
                self.a.ncols()
            )));
        }
        if self.c.shape() != (p, p) {
            return Err(SvarError::Dimension(format!(
                "C is {}x{}, expected {p}x{p}",
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        if self.shocks.len() != p {
            return Err(SvarError::Dimension(format!(
                "{} shock specs for {p} series",
                self.shocks.len()
            )));
        }
        Ok(())
    }

    /// Diagonal of per-series shock variances.
    pub fn shock_variance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.p(),
            self.shocks.iter().map(MixtureSpec::variance),
        ))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: SvarModel = serde_json::from_str(s)?;
        for s in &m.shocks {
            s.check()?;
        }
        Ok(m)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Copy with `A` rescaled so that its spectral radius equals `target`.
    /// Returns the model and the applied factor.
    pub fn with_max_eigenvalue(&self, target: f64) -> Result<(Self, f64)> {
        let rho = spectral_radius(&self.a);
        if rho == 0.0 {
            return Err(SvarError::Argument("A has zero spectral radius".into()));
        }
        let factor = target / rho;
        let mut out = self.clone();
        out.a *= factor;
        Ok((out, factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stationarity {
    Stationary,
    Boundary,
    NonStationary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShockMoments {
    pub mean: f64,
    pub variance: f64,
    pub third_central_moment: f64,
    pub asymmetric: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub spectral_radius: f64,
    pub stationarity: Stationarity,
    pub rank_c: usize,
    pub full_rank_c: bool,
    pub shocks: Vec<ShockMoments>,
    /// Human-readable list of violated assumptions.
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(model: &SvarModel) -> Result<ValidationReport> {
    model.check_dimensions()?;
    let p = model.p();
    let rho = spectral_radius(&model.a);
    let stationarity = if rho < 1.0 - STATIONARITY_TOL {
        Stationarity::Stationary
    } else if rho <= 1.0 + STATIONARITY_TOL {
        Stationarity::Boundary
    } else {
        Stationarity::NonStationary
    };
    let rank_c = numerical_rank(&model.c);
    let mut violations = Vec::new();
    match stationarity {
        Stationarity::Stationary => {}
        Stationarity::Boundary => violations.push(format!(
            "spectral radius of A is {rho} (on the unit-circle boundary)"
        )),
        Stationarity::NonStationary => {
            violations.push(format!("spectral radius of A is {rho} >= 1 (non-stationary)"))
        }
    }
    if rank_c < p {
        violations.push(format!("C has rank {rank_c} < {p}"));
    }
    let shocks: Vec<ShockMoments> = model
        .shocks
        .iter()
        .map(|s| {
            let third = s.third_central_moment();
            ShockMoments {
                mean: s.mean(),
                variance: s.variance(),
                third_central_moment: third,
                asymmetric: third.abs() > 1e-12,
            }
        })
        .collect();
    for (j, (spec, mom)) in model.shocks.iter().zip(&shocks).enumerate() {
        if let Err(e) = spec.check() {
            violations.push(format!("shock {j}: {e}"));
        }
        if !mom.asymmetric {
            violations.push(format!("shock {j} is symmetric"));
        }
    }
    Ok(ValidationReport {
        spectral_radius: rho,
        stationarity,
        rank_c,
        full_rank_c: rank_c == p,
        shocks,
        violations,
    })
}

/// Simulated latent path. Columns of `x` and `e` are time points; component
/// labels in `z` are zero-based.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x: DMatrix<f64>,
    pub z: Vec<Vec<usize>>,
    pub e: DMatrix<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// `max_t ||x_t - A x_{t-1} - C e_t||_inf` over `t >= 2`.
    pub fn reconstruction_error(&self, model: &SvarModel) -> f64 {
        (1..self.len())
            .map(|t| {
                let r = self.x.column(t) - &model.a * self.x.column(t - 1) - &model.c * self.e.column(t);
                r.amax()
            })
            .fold(0.0, f64::max)
    }
}

fn draw_shocks<R: Rng>(model: &SvarModel, rng: &mut R) -> (Vec<usize>, DVector<f64>) {
    let p = model.p();
    let mut z = Vec::with_capacity(p);
    let mut e = DVector::zeros(p);
    for (j, spec) in model.shocks.iter().enumerate() {
        let (c, v) = spec.sample(rng);
        z.push(c);
        e[j] = v;
    }
    (z, e)
}

/// Simulates `t_len` steps starting from `x0` at the first time point. The
/// shock drawn for the first time point is recorded but does not enter `x0`.
pub fn simulate(model: &SvarModel, t_len: usize, x0: &DVector<f64>, seed: u64) -> Result<Trajectory> {
    model.check_dimensions()?;
    let p = model.p();
    if t_len == 0 {
        return Err(SvarError::Argument("trajectory length must be >= 1".into()));
    }
    if x0.len() != p {
        return Err(SvarError::Dimension(format!("x0 has length {}, expected {p}", x0.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(run(model, t_len, x0.clone(), &mut rng, seed, true))
}

/// Simulates after discarding [`BURN_IN`] steps started at zero, so the
/// first recorded state is (approximately) a draw from the stationary law.
pub fn simulate_stationary(model: &SvarModel, t_len: usize, seed: u64) -> Result<Trajectory> {
    model.check_dimensions()?;
    if t_len == 0 {
        return Err(SvarError::Argument("trajectory length must be >= 1".into()));
    }
    let p = model.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::zeros(p);
    for _ in 0..BURN_IN {
        let (_, e) = draw_shocks(model, &mut rng);
        x = &model.a * &x + &model.c * &e;
    }
    Ok(run(model, t_len, x, &mut rng, seed, false))
}

fn run(
    model: &SvarModel,
    t_len: usize,
    start: DVector<f64>,
    rng: &mut ChaCha8Rng,
    seed: u64,
    start_given: bool,
) -> Trajectory {
    let p = model.p();
    let mut x = DMatrix::zeros(p, t_len);
    let mut e = DMatrix::zeros(p, t_len);
    let mut z = Vec::with_capacity(t_len);
    let (z0, e0) = draw_shocks(model, rng);
    let first = if start_given {
        start
    } else {
        &model.a * &start + &model.c * &e0
    };
    x.set_column(0, &first);
    e.set_column(0, &e0);
    z.push(z0);
    for t in 1..t_len {
        let (zt, et) = draw_shocks(model, rng);
        let xt = &model.a * x.column(t - 1) + &model.c * &et;
        x.set_column(t, &xt);
        e.set_column(t, &et);
        z.push(zt);
    }
    Trajectory { x, z, e, seed }
}

/// `x_t = F x~_{t-1} + L e~_t` where `x~_{t-1}` stacks the observed parts of
/// `x_{t-1}, ..., x_{t-h}` and `e~_t` stacks `e_t, ..., e_{t-h+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedRepresentation {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub k_star: usize,
}

impl StackedRepresentation {
    /// `p x p` block `q` (zero-based) of `F`, the coefficient on the observed part of `x_{t-q-1}`.
    pub fn f_block(&self, q: usize) -> DMatrix<f64> {
        let p = self.f.nrows();
        self.f.columns(q * p, p).into_owned()
    }

    /// `p x p` block `q` of `L`, the loading on `e_{t-q}`.
    pub fn l_block(&self, q: usize) -> DMatrix<f64> {
        let p = self.l.nrows();
        self.l.columns(q * p, p).into_owned()
    }
}

pub fn build_subsampled_repr(model: &SvarModel, k: usize) -> Result<StackedRepresentation> {
    model.check_dimensions()?;
    if k == 0 {
        return Err(SvarError::Argument("subsampling rate must be >= 1".into()));
    }
    let p = model.p();
    let mut f = DMatrix::zeros(p, k * p);
    f.columns_mut((k - 1) * p, p).copy_from(&matrix_power(&model.a, k));
    let mut l = DMatrix::zeros(p, k * p);
    let mut block = model.c.clone();
    for q in 0..k {
        l.columns_mut(q * p, p).copy_from(&block);
        block = &model.a * block;
    }
    Ok(StackedRepresentation { f, l, k_star: k })
}

/// Mixed-frequency representation anchored at a fully observed time
/// `t_anchor` (one-based). With `I_q` the selector of series observed at
/// `t_anchor - q` and `G_q = A (I - I_1) A ... (I - I_{q-1}) A`, block `q` of
/// `F` is `G_q I_q` and block `q` of `L` is `G_q (I - I_q) C`, unrolled to the
/// scheme's horizon.
pub fn build_mixed_freq_repr(
    model: &SvarModel,
    scheme: &SamplingScheme,
    t_anchor: usize,
) -> Result<StackedRepresentation> {
    model.check_dimensions()?;
    let p = model.p();
    if scheme.p() != p {
        return Err(SvarError::Dimension(format!(
            "scheme covers {} series, model has {p}",
            scheme.p()
        )));
    }
    if !scheme.fully_observed(t_anchor as i64) {
        return Err(SvarError::Argument(format!(
            "anchor t = {t_anchor} is not fully observed"
        )));
    }
    let h = scheme.horizon_before(t_anchor as i64)?;
    let selector = |q: usize| -> DMatrix<f64> {
        let t = t_anchor as i64 - q as i64;
        DMatrix::from_diagonal(&DVector::from_iterator(
            p,
            (0..p).map(|j| if scheme.is_observed(t, j) { 1.0 } else { 0.0 }),
        ))
    };
    let eye = DMatrix::<f64>::identity(p, p);
    let mut f = DMatrix::zeros(p, h * p);
    let mut l = DMatrix::zeros(p, h * p);
    l.columns_mut(0, p).copy_from(&model.c);
    // g holds G_q.
    let mut g = model.a.clone();
    for q in 1..=h {
        let obs = selector(q);
        f.columns_mut((q - 1) * p, p).copy_from(&(&g * &obs));
        if q < h {
            let hidden = &eye - &obs;
            l.columns_mut(q * p, p).copy_from(&(&g * &hidden * &model.c));
            g = &g * &hidden * &model.a;
        }
    }
    Ok(StackedRepresentation { f, l, k_star: h })
}

/// `L (I_k ⊗ Λ) L^T` with `Λ` the diagonal of mixture shock variances.
pub fn subsampled_error_covariance(model: &SvarModel, k: usize) -> Result<DMatrix<f64>> {
    let repr = build_subsampled_repr(model, k)?;
    let lambda = model.shock_variance_matrix();
    let big = kron(&DMatrix::identity(k, k), &lambda);
    let mut cov = &repr.l * big * repr.l.transpose();
    linalg::symmetrize(&mut cov);
    Ok(cov)
}

/// Parameter configurations used in the simulation study.
pub mod presets {
    use super::*;

    pub fn transition_a1() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.98, 0.0, 0.2, 0.98])
    }

    pub fn transition_a2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.98, 0.31, -0.31, 0.98])
    }

    pub fn structural_c1() -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }

    pub fn structural_c2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.2, 1.0])
    }

    /// Asymmetric two-component shocks; series 2 mirrors series 1.
    pub fn asymmetric_shocks() -> Vec<MixtureSpec> {
        let s1 = MixtureSpec {
            weights: vec![0.7, 0.3],
            means: vec![0.36, -0.84],
            variances: vec![0.04, 1.0],
        };
        let s2 = MixtureSpec {
            weights: vec![0.7, 0.3],
            means: vec![-0.36, 0.84],
            variances: vec![0.04, 1.0],
        };
        vec![s1, s2]
    }

    pub fn model(a: DMatrix<f64>, c: DMatrix<f64>) -> SvarModel {
        SvarModel {
            a,
            c,
            shocks: asymmetric_shocks(),
        }
    }

    /// Confounding example with unit Gaussian shocks. The lower-right entry of
    /// `A` is -0.8, the value consistent with `A^2 = 0.64 I`.
    pub fn confound_example() -> SvarModel {
        SvarModel {
            a: DMatrix::from_row_slice(2, 2, &[0.8, 0.5, 0.0, -0.8]),
            c: DMatrix::identity(2, 2),
            shocks: vec![MixtureSpec::standard_normal(); 2],
        }
    }
}
