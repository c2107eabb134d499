//! BIC scoring of structural variants and candidate time scales.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::em::{multi_start_fit_with, Constraint, EmConfig, FitResult, Theta};
use crate::error::{Result, SvarError};
use crate::sampling::ObservationSet;

/// One candidate model: structural constraint, latent steps per recorded
/// step `k`, and mixture size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub name: String,
    pub constraint: Constraint,
    pub k: usize,
    pub components: usize,
    #[serde(default)]
    pub zero_means: bool,
}

impl ModelVariant {
    pub fn new(name: &str, constraint: Constraint, k: usize, components: usize) -> Self {
        ModelVariant {
            name: name.to_string(),
            constraint,
            k,
            components,
            zero_means: false,
        }
    }

    /// Variant from one of the names `free`, `identity`, `diagonal`,
    /// `lower`, `upper`.
    pub fn named(name: &str, p: usize, k: usize, components: usize) -> Result<Self> {
        let constraint = match name {
            "free" => Constraint::Free,
            "identity" => Constraint::Identity,
            "diagonal" => Constraint::diagonal(p),
            "lower" => Constraint::lower_triangular(p),
            "upper" => Constraint::upper_triangular(p),
            other => {
                return Err(SvarError::Argument(format!(
                    "unknown variant '{other}' (expected free, identity, diagonal, lower or upper)"
                )))
            }
        };
        Ok(Self::new(name, constraint, k, components))
    }

    pub fn check(&self, p: usize) -> Result<()> {
        if self.k == 0 || self.components == 0 {
            return Err(SvarError::Argument(format!("variant '{}': k and components must be >= 1", self.name)));
        }
        self.constraint.check(p)
    }

    fn em_config(&self, base: &EmConfig) -> EmConfig {
        EmConfig {
            components: self.components,
            constraint: self.constraint.clone(),
            zero_means: self.zero_means,
            ..base.clone()
        }
    }
}

/// The four instantaneous-structure variants compared for a bivariate
/// system: diagonal, both triangular orderings, and unrestricted `C`.
pub fn structural_variants(p: usize, k: usize, components: usize) -> Vec<ModelVariant> {
    ["diagonal", "lower", "upper", "free"]
        .iter()
        .map(|n| ModelVariant::named(n, p, k, components).expect("known name"))
        .collect()
}

/// Free parameter count: `A`, the free entries of `C`, and per series
/// `m - 1` weights, `m` means (unless fixed at zero) and the variances not
/// pinned by the scale convention.
pub fn count_params(variant: &ModelVariant, p: usize) -> usize {
    let m = variant.components;
    let means = if variant.zero_means { 0 } else { m };
    let variances = if variant.constraint.scale_fixed() { m - 1 } else { m };
    p * p + variant.constraint.free_c_entries(p) + p * ((m - 1) + means + variances)
}

pub fn bic_value(log_likelihood: f64, d: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + d as f64 * (n as f64).ln()
}

/// BIC of a fit; failed fits are an error.
pub fn bic(fit: &FitResult, variant: &ModelVariant, p: usize, n: usize) -> Result<f64> {
    if let Some(msg) = &fit.failure {
        return Err(SvarError::FitFailed(format!("variant '{}': {msg}", variant.name)));
    }
    Ok(bic_value(fit.log_likelihood, count_params(variant, p), n))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredModel {
    pub variant: ModelVariant,
    pub fit: FitResult,
    pub d: usize,
    pub n: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Variants as requested, which fixes the row order of [`Self::table`].
    pub variants: Vec<ModelVariant>,
    /// Ascending BIC.
    pub models: Vec<ScoredModel>,
    /// Variants whose fit failed, with the reason.
    pub failures: Vec<(String, usize, String)>,
}

impl SelectionReport {
    pub fn best(&self) -> &ScoredModel {
        &self.models[0]
    }

    /// Plain-text grid: one row per variant name, one column per `k`.
    pub fn table(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for v in &self.variants {
            if !names.contains(&v.name.as_str()) {
                names.push(&v.name);
            }
        }
        let ks: BTreeSet<usize> = self.models.iter().map(|m| m.variant.k).collect();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}", "model");
        for k in &ks {
            let _ = write!(out, " {:>12}", format!("k={k}"));
        }
        out.push('\n');
        for name in names {
            let _ = write!(out, "{name:<width$}");
            for k in &ks {
                let cell = self
                    .models
                    .iter()
                    .find(|m| m.variant.name == name && m.variant.k == *k)
                    .map_or("-".to_string(), |m| format!("{:.3}", m.bic));
                let _ = write!(out, " {cell:>12}");
            }
            out.push('\n');
        }
        out
    }
}

/// Fits every variant and ranks them by BIC (ties: fewer parameters, then
/// input order). Variants sharing `k`, mixture size and mean restriction
/// are fitted from the most constrained upwards, and each larger model also
/// starts from the optima of the models nested in it.
pub fn select(obs: &ObservationSet, variants: &[ModelVariant], config: &EmConfig) -> Result<SelectionReport> {
    if variants.is_empty() {
        return Err(SvarError::Argument("no variants to score".into()));
    }
    let p = obs.p;
    for v in variants {
        v.check(p)?;
    }
    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.sort_by_key(|&i| (variants[i].k, variants[i].constraint.free_c_entries(p), i));

    let mut done: Vec<Option<FitResult>> = vec![None; variants.len()];
    let mut failures = Vec::new();
    let mut views: Vec<(usize, ObservationSet)> = Vec::new();
    for &i in &order {
        let v = &variants[i];
        if !views.iter().any(|(k, _)| *k == v.k) {
            views.push((v.k, obs.upsample(v.k)?));
        }
        let view = &views.iter().find(|(k, _)| *k == v.k).expect("view").1;
        let cfg = v.em_config(config);
        let warm: Vec<Theta> = (0..variants.len())
            .filter(|&j| j != i)
            .filter_map(|j| done[j].as_ref().map(|f| (j, f)))
            .filter(|(j, _)| {
                let u = &variants[*j];
                u.k == v.k
                    && u.components == v.components
                    && u.zero_means == v.zero_means
                    && u.constraint.nested_in(&v.constraint, p)
                    && v.constraint != Constraint::Identity
            })
            .map(|(_, f)| {
                let mut t = f.theta.clone();
                if !t.scale_fixed && cfg.constraint.scale_fixed() {
                    t.scale_fixed = true;
                    t.fix_scale();
                }
                t
            })
            .collect();
        match multi_start_fit_with(view, &cfg, &warm) {
            Ok(fit) => done[i] = Some(fit),
            Err(e) => failures.push((v.name.clone(), v.k, e.to_string())),
        }
    }

    let n = obs.n_observed_scalars();
    let mut models: Vec<(usize, ScoredModel)> = Vec::new();
    for (i, fit) in done.into_iter().enumerate() {
        let Some(fit) = fit else { continue };
        let v = variants[i].clone();
        let bic = bic(&fit, &v, p, n)?;
        models.push((
            i,
            ScoredModel {
                d: count_params(&v, p),
                variant: v,
                fit,
                n,
                bic,
            },
        ));
    }
    if models.is_empty() {
        return Err(SvarError::FitFailed(format!(
            "every variant failed: {}",
            failures.iter().map(|f| format!("{} (k={}): {}", f.0, f.1, f.2)).collect::<Vec<_>>().join("; ")
        )));
    }
    models.sort_by(|(ia, a), (ib, b)| a.bic.total_cmp(&b.bic).then(a.d.cmp(&b.d)).then(ia.cmp(ib)));
    Ok(SelectionReport {
        variants: variants.to_vec(),
        models: models.into_iter().map(|(_, m)| m).collect(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let v = |c| ModelVariant::new("x", c, 1, 2);
        assert_eq!(count_params(&v(Constraint::Free), 2), 16);
        assert_eq!(count_params(&v(Constraint::lower_triangular(2)), 2), 15);
        assert_eq!(count_params(&v(Constraint::diagonal(2)), 2), 14);
        // Shock variances are all free when C is pinned to the identity.
        assert_eq!(count_params(&v(Constraint::Identity), 2), 14);
        let mut g = ModelVariant::new("g", Constraint::Free, 1, 1);
        g.zero_means = true;
        assert_eq!(count_params(&g, 3), 9 + 9);
    }

    #[test]
    fn bic_arithmetic() {
        assert_eq!(bic_value(-10.0, 0, 50), 20.0);
        assert!(bic_value(-10.0, 3, 50) < bic_value(-11.0, 3, 50));
    }

    #[test]
    fn unknown_variant_name() {
        assert!(ModelVariant::named("sideways", 2, 1, 2).is_err());
    }
}
