use std::path::{Path, PathBuf};

use mfsvar::em::EmConfig;
use mfsvar::model::{presets, SvarModel};
use mfsvar::sampling::{mask_scheme, mixed_scheme, uniform_scheme, SamplingScheme};
use mfsvar::selection::ModelVariant;
use mfsvar::{Result, SvarError};
use serde::{Deserialize, Serialize};

/// Ground-truth model: a JSON file, an inline model, or a named preset
/// (`a1c1`, `a1c2`, `a2c1`, `a2c2` with the preset asymmetric mixtures).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Inline(SvarModel),
    Named(String),
}

impl ModelSource {
    pub fn resolve(&self, base: &Path) -> Result<SvarModel> {
        match self {
            ModelSource::Inline(m) => Ok(m.clone()),
            ModelSource::Named(name) => {
                let (a, c) = match name.as_str() {
                    "a1c1" => (presets::transition_a1(), presets::structural_c1()),
                    "a1c2" => (presets::transition_a1(), presets::structural_c2()),
                    "a2c1" => (presets::transition_a2(), presets::structural_c1()),
                    "a2c2" => (presets::transition_a2(), presets::structural_c2()),
                    path => return SvarModel::load(&base.join(path)),
                };
                Ok(presets::model(a, c))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeSpec {
    Full,
    Uniform { k: usize },
    Mixed { rates: Vec<usize> },
    Mask { mask: Vec<Vec<bool>> },
}

impl SchemeSpec {
    pub fn build(&self, p: usize) -> Result<SamplingScheme> {
        match self {
            SchemeSpec::Full => uniform_scheme(p, 1),
            SchemeSpec::Uniform { k } => uniform_scheme(p, *k),
            SchemeSpec::Mixed { rates } => mixed_scheme(rates),
            SchemeSpec::Mask { mask } => mask_scheme(mask.clone()),
        }
    }
}

/// One experiment manifest. Every command-line flag has a field here and
/// flags take precedence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelSource>,
    pub scheme: SchemeSpec,
    pub t: usize,
    pub seeds: Vec<u64>,
    /// Rescale the true `A` to each of these spectral radii (eigenvalue sweep).
    pub max_eigenvalues: Vec<f64>,
    pub em: EmConfig,
    /// Variant names for `select`; see `ModelVariant::named`.
    pub variants: Vec<String>,
    /// Fully specified variants, used in addition to `variants`.
    pub custom_variants: Vec<ModelVariant>,
    /// Candidate time scales for `select`.
    pub k: Vec<usize>,
    /// Datasets for `fit`/`select`; defaults to those listed by `simulate`.
    pub data: Vec<PathBuf>,
    pub symmetric_shocks: bool,
    pub histogram_bins: usize,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            scheme: SchemeSpec::Full,
            t: 805,
            seeds: vec![0],
            max_eigenvalues: Vec::new(),
            em: EmConfig::default(),
            variants: Vec::new(),
            custom_variants: Vec::new(),
            k: vec![1],
            data: Vec::new(),
            symmetric_shocks: false,
            histogram_bins: mfsvar::eval::DEFAULT_BINS,
            out: None,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SvarError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(SvarError::Argument("config needs at least one seed".into()));
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(SvarError::Argument("candidate k values must be >= 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(SvarError::Argument("histogram_bins must be >= 1".into()));
        }
        self.em.validate()
    }

    pub fn variant_list(&self, p: usize) -> Result<Vec<ModelVariant>> {
        let mut out = Vec::new();
        let names: Vec<&str> = if self.variants.is_empty() && self.custom_variants.is_empty() {
            vec!["free"]
        } else {
            self.variants.iter().map(String::as_str).collect()
        };
        for &k in &self.k {
            for n in &names {
                out.push(ModelVariant::named(n, p, k, self.em.components)?);
            }
            for v in &self.custom_variants {
                out.push(ModelVariant { k, ..v.clone() });
            }
        }
        Ok(out)
    }
}

/// Written by `simulate`; read by the other commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub data: PathBuf,
    pub truth: PathBuf,
    pub seed: u64,
    pub t: usize,
    pub k: Vec<usize>,
    /// Group label; datasets sharing it are summarised together.
    pub group: String,
    pub max_eigenvalue: f64,
    pub scale_factor: Option<f64>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SvarError::Argument(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}
