//! Error metrics modulo the identifiability class of `C` (signed column
//! permutations) and summaries over repeated runs.
//!
//! Both the estimate and the truth are first put in the unit-variance
//! convention: column `j` of `C` is multiplied by the standard deviation of
//! shock `j`. This removes the scale that is traded between `C` and the
//! mixtures and leaves only the signed permutation to search.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvarError};
use crate::model::SvarModel;

/// Largest dimension handled by the exhaustive alignment search.
pub const MAX_ALIGN_DIM: usize = 8;

/// Column `j` of the aligned matrix is `signs[j]` times column `perm[j]`
/// of the original.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedPermutation {
    pub perm: Vec<usize>,
    pub signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn identity(p: usize) -> Self {
        SignedPermutation {
            perm: (0..p).collect(),
            signs: vec![1; p],
        }
    }

    pub fn is_valid(&self) -> bool {
        let p = self.perm.len();
        let mut seen = vec![false; p];
        self.signs.len() == p
            && self.signs.iter().all(|s| *s == 1 || *s == -1)
            && self.perm.iter().all(|&j| j < p && !std::mem::replace(&mut seen[j], true))
    }

    pub fn apply_columns(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| f64::from(self.signs[j]) * c[(i, self.perm[j])])
    }

    /// The observationally equivalent model with `C` columns and shocks
    /// rearranged (a negated shock has negated means).
    pub fn apply_to_model(&self, model: &SvarModel) -> SvarModel {
        let shocks = (0..self.perm.len())
            .map(|j| {
                let s = &model.shocks[self.perm[j]];
                if self.signs[j] < 0 {
                    s.scaled(-1.0)
                } else {
                    s.clone()
                }
            })
            .collect();
        SvarModel {
            a: model.a.clone(),
            c: self.apply_columns(&model.c),
            shocks,
        }
    }
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(p), &mut vec![false; p], &mut out);
    out
}

/// Signed permutation minimising `||C_hat P - C_true||_F` over all
/// `p! 2^p` candidates. For a fixed permutation the best sign of each
/// column is chosen independently, which covers every sign pattern.
pub fn align(c_hat: &DMatrix<f64>, c_true: &DMatrix<f64>) -> Result<(SignedPermutation, DMatrix<f64>)> {
    let p = c_true.ncols();
    if c_hat.shape() != (p, p) || c_true.nrows() != p {
        return Err(SvarError::Dimension("alignment needs two square matrices of equal size".into()));
    }
    if p > MAX_ALIGN_DIM {
        return Err(SvarError::Capacity {
            required: (1..=p as u128).product::<u128>() << p,
            budget: (1..=MAX_ALIGN_DIM as u128).product::<u128>() << MAX_ALIGN_DIM,
        });
    }
    // cost[(src, dst)][sign] = squared distance of +-column src to column dst.
    let mut cost = vec![[0.0f64; 2]; p * p];
    for src in 0..p {
        for dst in 0..p {
            for (s, sign) in [1.0, -1.0].iter().enumerate() {
                cost[src * p + dst][s] = (0..p).map(|i| (sign * c_hat[(i, src)] - c_true[(i, dst)]).powi(2)).sum();
            }
        }
    }
    let mut best: Option<(f64, SignedPermutation)> = None;
    for perm in permutations(p) {
        let mut total = 0.0;
        let mut signs = Vec::with_capacity(p);
        for (dst, &src) in perm.iter().enumerate() {
            let [plus, minus] = cost[src * p + dst];
            if minus < plus {
                total += minus;
                signs.push(-1);
            } else {
                total += plus;
                signs.push(1);
            }
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, SignedPermutation { perm, signs }));
        }
    }
    let (_, sp) = best.expect("p >= 1");
    let aligned = sp.apply_columns(c_hat);
    Ok((sp, aligned))
}

/// Sign pattern `D` minimising `||A_hat D - A_true||_F`, used when symmetric
/// shocks leave the column signs of `A` unidentified.
pub fn align_column_signs(a_hat: &DMatrix<f64>, a_true: &DMatrix<f64>) -> (Vec<i8>, DMatrix<f64>) {
    let signs: Vec<i8> = (0..a_true.ncols())
        .map(|j| {
            let plus = (a_hat.column(j) - a_true.column(j)).norm_squared();
            let minus = (a_hat.column(j) + a_true.column(j)).norm_squared();
            if minus < plus {
                -1
            } else {
                1
            }
        })
        .collect();
    let aligned = DMatrix::from_fn(a_hat.nrows(), a_hat.ncols(), |i, j| f64::from(signs[j]) * a_hat[(i, j)]);
    (signs, aligned)
}

/// `C` with column `j` multiplied by the standard deviation of shock `j`.
pub fn unit_variance_c(model: &SvarModel) -> DMatrix<f64> {
    let mut c = model.c.clone();
    for (j, s) in model.shocks.iter().enumerate() {
        let sd = s.variance().sqrt();
        c.column_mut(j).scale_mut(sd);
    }
    c
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Shocks are symmetric, so `A` is compared up to column signs.
    pub symmetric_shocks: bool,
}

/// Aligned comparison of one estimate with the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamErrors {
    pub alignment: SignedPermutation,
    pub a_signs: Vec<i8>,
    pub a_raw: Vec<Vec<f64>>,
    pub c_raw: Vec<Vec<f64>>,
    pub a_aligned: Vec<Vec<f64>>,
    pub c_aligned: Vec<Vec<f64>>,
    pub a_truth: Vec<Vec<f64>>,
    pub c_truth: Vec<Vec<f64>>,
    /// Absolute entry errors after alignment.
    pub a_error: Vec<Vec<f64>>,
    pub c_error: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    crate::linalg::to_rows(m)
}

impl ParamErrors {
    pub fn mean_abs_a(&self) -> f64 {
        mean(self.a_error.iter().flatten().cloned())
    }

    pub fn mean_abs_c(&self) -> f64 {
        mean(self.c_error.iter().flatten().cloned())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn param_errors(estimate: &SvarModel, truth: &SvarModel, opts: EvalOptions) -> Result<ParamErrors> {
    let p = truth.p();
    if estimate.p() != p {
        return Err(SvarError::Dimension(format!("estimate has p={} but truth has p={p}", estimate.p())));
    }
    let c_hat = unit_variance_c(estimate);
    let c_true = unit_variance_c(truth);
    let (alignment, c_aligned) = align(&c_hat, &c_true)?;
    let (a_signs, a_aligned) = if opts.symmetric_shocks {
        align_column_signs(&estimate.a, &truth.a)
    } else {
        (vec![1; p], estimate.a.clone())
    };
    Ok(ParamErrors {
        alignment,
        a_signs,
        a_raw: rows(&estimate.a),
        c_raw: rows(&c_hat),
        a_error: rows(&(&a_aligned - &truth.a).abs()),
        c_error: rows(&(&c_aligned - &c_true).abs()),
        a_aligned: rows(&a_aligned),
        c_aligned: rows(&c_aligned),
        a_truth: rows(&truth.a),
        c_truth: rows(&c_true),
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub label: String,
    pub k: Vec<usize>,
    pub t: usize,
    /// Spectral radius of the true `A`.
    pub max_eigenvalue: f64,
    /// Factor applied to a base `A` to reach `max_eigenvalue`, if any.
    pub scale_factor: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    /// Values outside `[lo, hi]`.
    pub outside: usize,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let mut outside = 0;
        for &v in values {
            if !(lo..=hi).contains(&v) {
                outside += 1;
                continue;
            }
            let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts, outside }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntrySummary {
    pub matrix: char,
    pub row: usize,
    pub col: usize,
    pub truth: f64,
    pub estimates: Vec<f64>,
    pub mean_abs_error: f64,
    pub median_abs_error: f64,
    pub std_error: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub metadata: RunMetadata,
    pub runs: Vec<ParamErrors>,
    pub entries: Vec<EntrySummary>,
    /// Mean over runs of the per-run mean absolute entry error.
    pub mean_abs_error_a: f64,
    pub std_error_a: f64,
    pub mean_abs_error_c: f64,
    pub std_error_c: f64,
}

/// Mean and standard error of the mean; one value has zero standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = mean(values.iter().cloned());
    if n < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const DEFAULT_BINS: usize = 30;

pub fn summarize(runs: Vec<ParamErrors>, mut metadata: RunMetadata, bins: usize) -> Result<RunSummary> {
    if runs.is_empty() {
        return Err(SvarError::Argument("no runs to summarise".into()));
    }
    if bins == 0 {
        return Err(SvarError::Argument("histogram needs at least one bin".into()));
    }
    metadata.runs = runs.len();
    let p = runs[0].a_truth.len();
    let mut entries = Vec::new();
    for (matrix, get_est, get_truth, get_err) in [
        (
            'A',
            (|r: &ParamErrors| &r.a_aligned) as fn(&ParamErrors) -> &Vec<Vec<f64>>,
            (|r: &ParamErrors| &r.a_truth) as fn(&ParamErrors) -> &Vec<Vec<f64>>,
            (|r: &ParamErrors| &r.a_error) as fn(&ParamErrors) -> &Vec<Vec<f64>>,
        ),
        ('C', |r| &r.c_aligned, |r| &r.c_truth, |r| &r.c_error),
    ] {
        for row in 0..p {
            for col in 0..p {
                let estimates: Vec<f64> = runs.iter().map(|r| get_est(r)[row][col]).collect();
                let errors: Vec<f64> = runs.iter().map(|r| get_err(r)[row][col]).collect();
                let truth = get_truth(&runs[0])[row][col];
                let (mae, se) = mean_and_se(&errors);
                entries.push(EntrySummary {
                    matrix,
                    row,
                    col,
                    truth,
                    histogram: Histogram::new(&estimates, truth - 1.0, truth + 1.0, bins),
                    estimates,
                    mean_abs_error: mae,
                    median_abs_error: median(&errors),
                    std_error: se,
                });
            }
        }
    }
    let (mean_abs_error_a, std_error_a) = mean_and_se(&runs.iter().map(ParamErrors::mean_abs_a).collect::<Vec<_>>());
    let (mean_abs_error_c, std_error_c) = mean_and_se(&runs.iter().map(ParamErrors::mean_abs_c).collect::<Vec<_>>());
    Ok(RunSummary {
        metadata,
        runs,
        entries,
        mean_abs_error_a,
        std_error_a,
        mean_abs_error_c,
        std_error_c,
    })
}

impl RunSummary {
    /// One row per (run, matrix, entry): raw and aligned estimates.
    pub fn errors_csv(&self) -> String {
        let mut out = String::from("run,matrix,row,col,raw,aligned,truth,abs_error\n");
        for (n, r) in self.runs.iter().enumerate() {
            for (name, raw, al, tr, err) in [
                ('A', &r.a_raw, &r.a_aligned, &r.a_truth, &r.a_error),
                ('C', &r.c_raw, &r.c_aligned, &r.c_truth, &r.c_error),
            ] {
                for i in 0..tr.len() {
                    for j in 0..tr.len() {
                        let _ = writeln!(
                            out,
                            "{n},{name},{},{},{},{},{},{}",
                            i + 1,
                            j + 1,
                            raw[i][j],
                            al[i][j],
                            tr[i][j],
                            err[i][j]
                        );
                    }
                }
            }
        }
        out
    }

    /// Per-entry histogram counts, one row per (matrix, entry, bin).
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("matrix,row,col,bin_lo,bin_hi,count\n");
        for e in &self.entries {
            let h = &e.histogram;
            let w = (h.hi - h.lo) / h.counts.len() as f64;
            for (b, c) in h.counts.iter().enumerate() {
                let lo = h.lo + w * b as f64;
                let _ = writeln!(out, "{},{},{},{lo},{},{c}", e.matrix, e.row + 1, e.col + 1, lo + w);
            }
        }
        out
    }
}

/// Mean error against maximum eigenvalue, one row per summary.
pub fn sweep_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from("label,max_eigenvalue,scale_factor,runs,mae_a,se_a,mae_c,se_c\n");
    for s in summaries {
        let m = &s.metadata;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.label,
            m.max_eigenvalue,
            m.scale_factor.map_or(String::new(), |f| f.to_string()),
            m.runs,
            s.mean_abs_error_a,
            s.std_error_a,
            s.mean_abs_error_c,
            s.std_error_c
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn identity_alignment_of_truth() {
        let c = presets::structural_c2();
        let (sp, aligned) = align(&c, &c).unwrap();
        assert_eq!(sp, SignedPermutation::identity(2));
        assert_eq!(aligned, c);
    }

    #[test]
    fn recovers_planted_signed_permutation() {
        let c = crate::linalg::from_rows(&[vec![1.0, 0.3, -0.2], vec![0.1, 0.9, 0.4], vec![-0.5, 0.2, 1.2]]).unwrap();
        let planted = SignedPermutation {
            perm: vec![2, 0, 1],
            signs: vec![-1, 1, -1],
        };
        let c_hat = planted.apply_columns(&c);
        let (sp, aligned) = align(&c_hat, &c).unwrap();
        assert!((aligned - &c).amax() == 0.0);
        assert_eq!(sp.apply_columns(&c_hat), c);
    }

    #[test]
    fn capacity_limit() {
        let c = DMatrix::<f64>::identity(9, 9);
        assert!(matches!(align(&c, &c), Err(SvarError::Capacity { .. })));
    }

    #[test]
    fn single_run_summary() {
        let m = presets::model(presets::transition_a1(), presets::structural_c1());
        let e = param_errors(&m, &m, EvalOptions::default()).unwrap();
        let s = summarize(vec![e], RunMetadata::default(), DEFAULT_BINS).unwrap();
        assert_eq!(s.mean_abs_error_a, 0.0);
        assert_eq!(s.std_error_a, 0.0);
        for e in &s.entries {
            assert_eq!(e.histogram.counts.iter().sum::<usize>(), 1);
        }
    }

    #[test]
    fn histogram_edges() {
        let h = Histogram::new(&[-1.0, 1.0, 0.0, 2.0], -1.0, 1.0, 4);
        assert_eq!(h.counts, vec![1, 0, 1, 1]);
        assert_eq!(h.outside, 1);
    }
}
