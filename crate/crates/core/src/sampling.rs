//! Observation schemes and the decomposition of observed records into
//! blocks bounded by fully observed time points.
//!
//! Time indices are one-based throughout this module: with rate `k` a series
//! is observed at `t = 1, 1 + k, 1 + 2k, ...`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvarError};
use crate::linalg::{gcd, lcm};
use crate::model::Trajectory;

/// The sampling structures distinguished in the literature on subsampled
/// and mixed-frequency series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Every series observed at every step.
    Full,
    /// All series share one rate `k > 1`.
    Uniform,
    /// Some series at every step, others slower.
    MixedStandard,
    /// Distinct rates sharing a common factor above one.
    MixedSubsampled,
    /// Distinct coprime rates, none equal to one.
    MixedCoprime,
    /// Explicit observation mask.
    Mask,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchemeKind::Full => "full",
            SchemeKind::Uniform => "A (uniform subsampling)",
            SchemeKind::MixedStandard => "B (mixed frequency)",
            SchemeKind::MixedSubsampled => "C (subsampled mixed frequency)",
            SchemeKind::MixedCoprime => "D (mixed frequency, coprime rates)",
            SchemeKind::Mask => "mask",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Rates(Vec<usize>),
    /// `mask[t - 1][j]` is true when series `j` is observed at time `t`.
    Mask(Vec<Vec<bool>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub kind: SchemeKind,
    pub pattern: Pattern,
    p: usize,
}

pub fn uniform_scheme(p: usize, k: usize) -> Result<SamplingScheme> {
    if k == 0 {
        return Err(SvarError::Argument("subsampling rate must be >= 1".into()));
    }
    if p == 0 {
        return Err(SvarError::Argument("scheme needs at least one series".into()));
    }
    Ok(SamplingScheme {
        kind: if k == 1 {
            SchemeKind::Full
        } else {
            SchemeKind::Uniform
        },
        pattern: Pattern::Rates(vec![k; p]),
        p,
    })
}

pub fn mixed_scheme(rates: &[usize]) -> Result<SamplingScheme> {
    if rates.is_empty() {
        return Err(SvarError::Argument("empty rate vector".into()));
    }
    if rates.iter().any(|&k| k == 0) {
        return Err(SvarError::Argument("rates must be >= 1".into()));
    }
    let min = *rates.iter().min().unwrap();
    let max = *rates.iter().max().unwrap();
    let kind = if min == max {
        if min == 1 {
            SchemeKind::Full
        } else {
            SchemeKind::Uniform
        }
    } else if min == 1 {
        SchemeKind::MixedStandard
    } else if rates.iter().fold(0, |g, &k| gcd(g, k)) > 1 {
        SchemeKind::MixedSubsampled
    } else {
        SchemeKind::MixedCoprime
    };
    Ok(SamplingScheme {
        kind,
        pattern: Pattern::Rates(rates.to_vec()),
        p: rates.len(),
    })
}

pub fn mask_scheme(mask: Vec<Vec<bool>>) -> Result<SamplingScheme> {
    let p = mask.first().map_or(0, |r| r.len());
    if p == 0 || mask.iter().any(|r| r.len() != p) {
        return Err(SvarError::Argument("mask must be a non-empty T x p table".into()));
    }
    Ok(SamplingScheme {
        kind: SchemeKind::Mask,
        pattern: Pattern::Mask(mask),
        p,
    })
}

impl SamplingScheme {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rates(&self) -> Option<&[usize]> {
        match &self.pattern {
            Pattern::Rates(r) => Some(r),
            Pattern::Mask(_) => None,
        }
    }

    /// Rate schemes extend periodically to all integers; masks are false
    /// outside their span.
    pub fn is_observed(&self, t: i64, j: usize) -> bool {
        match &self.pattern {
            Pattern::Rates(r) => (t - 1).rem_euclid(r[j] as i64) == 0,
            Pattern::Mask(m) => {
                t >= 1 && (t as usize) <= m.len() && m[(t - 1) as usize][j]
            }
        }
    }

    pub fn fully_observed(&self, t: i64) -> bool {
        (0..self.p).all(|j| self.is_observed(t, j))
    }

    /// Distance from `t` back to the previous fully observed time.
    pub fn horizon_before(&self, t: i64) -> Result<usize> {
        match &self.pattern {
            Pattern::Rates(_) => Ok(self.k_star()),
            Pattern::Mask(_) => (1..t)
                .find(|&q| self.fully_observed(t - q))
                .map(|q| q as usize)
                .ok_or_else(|| {
                    SvarError::Scheme(format!("no fully observed time before t = {t}"))
                }),
        }
    }

    /// Least common multiple of the rates; for masks, the longest gap
    /// between consecutive fully observed times.
    pub fn k_star(&self) -> usize {
        match &self.pattern {
            Pattern::Rates(r) => r.iter().fold(1, |acc, &k| lcm(acc, k)),
            Pattern::Mask(m) => {
                let anchors: Vec<usize> = (1..=m.len())
                    .filter(|&t| self.fully_observed(t as i64))
                    .collect();
                anchors.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(1)
            }
        }
    }
}

pub fn k_star(scheme: &SamplingScheme) -> usize {
    scheme.k_star()
}

/// Observation pattern of a block: observed series at each time, endpoints
/// included. Blocks with equal patterns share filter covariances.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockPattern {
    pub observed: Vec<Vec<usize>>,
}

impl BlockPattern {
    /// Number of transitions spanned by the block.
    pub fn steps(&self) -> usize {
        self.observed.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub t0: usize,
    pub t1: usize,
    /// Observed series per time `t0..=t1`.
    pub observed: Vec<Vec<usize>>,
    /// Observed values per time, aligned with `observed`.
    pub values: Vec<Vec<f64>>,
    pub pattern: usize,
}

impl Block {
    pub fn steps(&self) -> usize {
        self.t1 - self.t0
    }

    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        self.t0..=self.t1
    }

    pub fn anchor(&self) -> &[f64] {
        &self.values[0]
    }
}

/// Observed record decomposed into anchor-to-anchor blocks.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub p: usize,
    pub t_len: usize,
    pub blocks: Vec<Block>,
    pub patterns: Vec<BlockPattern>,
    pub kind: SchemeKind,
    pub warnings: Vec<String>,
    data: Vec<Vec<Option<f64>>>,
}

impl ObservationSet {
    /// Builds blocks from a `T x p` table with `None` for missing cells.
    /// Fully observed stretches become unit blocks.
    pub fn from_partial(data: Vec<Vec<Option<f64>>>, kind: SchemeKind) -> Result<Self> {
        let t_len = data.len();
        let p = data.first().map_or(0, |r| r.len());
        if p == 0 || data.iter().any(|r| r.len() != p) {
            return Err(SvarError::Dimension("observation table must be T x p with p >= 1".into()));
        }
        if let Some((t, j)) = data.iter().enumerate().find_map(|(t, r)| {
            r.iter().position(|v| v.is_some_and(|x| !x.is_finite())).map(|j| (t, j))
        }) {
            return Err(SvarError::Argument(format!(
                "non-finite observation at t = {}, series {}",
                t + 1,
                j + 1
            )));
        }
        let anchors: Vec<usize> = (0..t_len)
            .filter(|&t| data[t].iter().all(Option::is_some))
            .collect();
        if anchors.len() < 2 {
            return Err(SvarError::Scheme(format!(
                "need at least two fully observed time points, found {}",
                anchors.len()
            )));
        }
        for j in 0..p {
            let count = data.iter().filter(|r| r[j].is_some()).count();
            if count < 2 {
                return Err(SvarError::Scheme(format!(
                    "series {} is observed fewer than twice",
                    j + 1
                )));
            }
        }
        let mut warnings = Vec::new();
        let first = anchors[0];
        let last = *anchors.last().unwrap();
        if first > 0 {
            warnings.push(format!(
                "dropped {} leading time points before the first fully observed time",
                first
            ));
        }
        if last + 1 < t_len {
            warnings.push(format!(
                "dropped {} trailing time points after the last fully observed time",
                t_len - 1 - last
            ));
        }
        let mut pattern_ids: HashMap<BlockPattern, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut blocks = Vec::with_capacity(anchors.len() - 1);
        for w in anchors.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut observed = Vec::with_capacity(b - a + 1);
            let mut values = Vec::with_capacity(b - a + 1);
            for row in &data[a..=b] {
                let idx: Vec<usize> = (0..p).filter(|&j| row[j].is_some()).collect();
                values.push(idx.iter().map(|&j| row[j].unwrap()).collect());
                observed.push(idx);
            }
            let key = BlockPattern {
                observed: observed.clone(),
            };
            let next = patterns.len();
            let id = *pattern_ids.entry(key.clone()).or_insert_with(|| {
                patterns.push(key);
                next
            });
            blocks.push(Block {
                t0: a + 1,
                t1: b + 1,
                observed,
                values,
                pattern: id,
            });
        }
        Ok(ObservationSet {
            p,
            t_len,
            blocks,
            patterns,
            kind,
            warnings,
            data,
        })
    }

    pub fn data(&self) -> &[Vec<Option<f64>>] {
        &self.data
    }

    /// Number of transitions (shock time points) covered by the blocks.
    pub fn transitions(&self) -> usize {
        self.blocks.iter().map(Block::steps).sum()
    }

    /// Observed scalars entering the conditional likelihood: every observed
    /// entry after the first anchor, up to the last anchor.
    pub fn n_observed_scalars(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.observed[1..].iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    /// Reinterprets each recorded step as `k` latent steps, inserting
    /// `k - 1` unobserved time points between consecutive records.
    pub fn upsample(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(SvarError::Argument("time scale must be >= 1".into()));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let t_new = 1 + (self.t_len - 1) * k;
        let mut data = vec![vec![None; self.p]; t_new];
        for (t, row) in self.data.iter().enumerate() {
            data[t * k] = row.clone();
        }
        let kind = match self.kind {
            SchemeKind::Full => SchemeKind::Uniform,
            other => other,
        };
        Self::from_partial(data, kind)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.data)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_partial(read_csv(path)?, SchemeKind::Mask)
    }
}

/// Masks a trajectory with a scheme and decomposes the result into blocks.
pub fn apply(scheme: &SamplingScheme, traj: &Trajectory) -> Result<ObservationSet> {
    let p = traj.x.nrows();
    if scheme.p() != p {
        return Err(SvarError::Dimension(format!(
            "scheme covers {} series, trajectory has {p}",
            scheme.p()
        )));
    }
    if let Pattern::Mask(m) = &scheme.pattern {
        if m.len() < traj.len() {
            return Err(SvarError::Scheme(format!(
                "mask spans {} time points, trajectory has {}",
                m.len(),
                traj.len()
            )));
        }
    }
    let data: Vec<Vec<Option<f64>>> = (0..traj.len())
        .map(|t| {
            (0..p)
                .map(|j| scheme.is_observed(t as i64 + 1, j).then(|| traj.x[(j, t)]))
                .collect()
        })
        .collect();
    ObservationSet::from_partial(data, scheme.kind)
}

/// Writes `t,x1,...,xp` with empty cells for missing entries.
pub fn write_csv(path: &Path, data: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(data.first().map_or(0, |r| r.len())))?;
    for (t, row) in data.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_header(p: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)?;
    let header = r.headers()?.clone();
    let p = header.len().saturating_sub(1);
    if p == 0 || header.get(0) != Some("t") {
        return Err(SvarError::Parse("expected header `t,x1,...,xp`".into()));
    }
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let t: usize = rec[0]
            .parse()
            .map_err(|_| SvarError::Parse(format!("row {}: bad time index {:?}", i + 1, &rec[0])))?;
        if t != i + 1 {
            return Err(SvarError::Parse(format!(
                "row {}: time index {t} is not consecutive",
                i + 1
            )));
        }
        let row = (1..=p)
            .map(|j| {
                let cell = &rec[j];
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| {
                        SvarError::Parse(format!("row {}: bad value {cell:?}", i + 1))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        data.push(row);
    }
    if data.is_empty() {
        return Err(SvarError::Parse("no data rows".into()));
    }
    Ok(data)
}
