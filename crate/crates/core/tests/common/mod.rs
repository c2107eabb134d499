#![allow(dead_code)]

use mfsvar::em::{e_step, ExpectedStats, Theta};
use mfsvar::model::{simulate_stationary, MixtureSpec, SvarModel};
use mfsvar::sampling::{apply, uniform_scheme, ObservationSet};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable `A` with spectral norm at most `max_norm`.
pub fn random_stable_a<R: Rng>(rng: &mut R, p: usize, max_norm: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let norm = a.clone().svd(false, false).singular_values.max();
    let target = rng.random_range(0.2..max_norm);
    a * (target / norm)
}

/// Well-conditioned `C` near the identity.
pub fn random_c<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| {
        let off: f64 = rng.random_range(-0.4..0.4);
        if i == j {
            1.0 + off.abs()
        } else {
            off
        }
    })
}

pub fn random_mixture<R: Rng>(rng: &mut R, m: usize) -> MixtureSpec {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut means: Vec<f64> = (0..m).map(|_| rng.random_range(-0.8..0.8)).collect();
    let centre: f64 = means.iter().zip(&weights).map(|(a, b)| a * b).sum();
    means.iter_mut().for_each(|v| *v -= centre);
    let variances = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    MixtureSpec::new(weights, means, variances).unwrap()
}

pub fn random_model<R: Rng>(rng: &mut R, p: usize, m: usize) -> SvarModel {
    let a = random_stable_a(rng, p, 0.95);
    let c = random_c(rng, p);
    let shocks = (0..p).map(|_| random_mixture(rng, m)).collect();
    SvarModel::new(a, c, shocks).unwrap()
}

pub fn subsampled(model: &SvarModel, k: usize, t: usize, seed: u64) -> ObservationSet {
    let traj = simulate_stationary(model, t, seed).unwrap();
    apply(&uniform_scheme(model.p(), k).unwrap(), &traj).unwrap()
}

/// Random parameters, data and the expected statistics they induce.
pub fn random_problem(seed: u64, p: usize, m: usize, k: usize, t: usize) -> (Theta, ExpectedStats) {
    let mut r = rng(seed);
    let truth = random_model(&mut r, p, m);
    let obs = subsampled(&truth, k, t, seed);
    let other = random_model(&mut r, p, m);
    let theta = Theta::from_model(&other, true).unwrap();
    let (stats, _) = e_step(&theta, &obs, 1 << 20).unwrap();
    (theta, stats)
}

/// Unconstrained Nelder-Mead maximisation, used as an optimizer oracle.
pub fn nelder_mead_max(f: impl Fn(&[f64]) -> f64, start: &[f64], scale: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let g = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let mut vals: Vec<f64> = simplex.iter().map(|x| g(x)).collect();
    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() < 1e-15 * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|d| centroid[d] + t * (simplex[n][d] - centroid[d])).collect() };
        let xr = along(-1.0);
        let fr = g(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = g(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
            let fc = g(&xc);
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|d| simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d])).collect();
                    vals[i] = g(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    (simplex[best].clone(), -vals[best])
}
