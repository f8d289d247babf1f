//! Experiment configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use evidx_core::genetic::{FitnessMode, GeneticParams};
use evidx_core::layout::DataLayout;
use evidx_core::mutation::Distributions;
use evidx_core::search::SearchMethod;
use evidx_core::workload::{self, Dataset, Domain, QueryMode, WorkloadSpec};
use serde::{Deserialize, Serialize};

pub const EXPERIMENT_VERSION: u32 = 1;

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "EVIDX_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    UniDense { n: usize },
    /// Synthetic skewed keys; not a real dataset.
    Skewed { n: usize, seed: u64 },
    /// Uniform sample of a binary key file.
    File { path: PathBuf, n: usize, seed: u64 },
}

impl DatasetSpec {
    pub fn size(&self) -> usize {
        match self {
            DatasetSpec::UniDense { n } | DatasetSpec::Skewed { n, .. } | DatasetSpec::File { n, .. } => *n,
        }
    }

    pub fn with_size(&self, size: usize) -> DatasetSpec {
        let mut s = self.clone();
        match &mut s {
            DatasetSpec::UniDense { n } | DatasetSpec::Skewed { n, .. } | DatasetSpec::File { n, .. } => *n = size,
        }
        s
    }

    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DatasetSpec::UniDense { n } => workload::gen_uni_dense(*n)?,
            DatasetSpec::Skewed { n, seed } => workload::gen_skewed(*n, *seed)?,
            DatasetSpec::File { path, n, seed } => {
                workload::load_and_sample(path, *n, *seed).with_context(|| format!("loading {}", path.display()))?
            }
        })
    }
}

/// Reference index the search result is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    SingleHash,
    BulkloadedBtree { leaf_count: usize, fanout: usize, layout: DataLayout, search: SearchMethod },
    /// An index config file rebuilt over the dataset.
    HandSpec { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSpec,
    pub workload: WorkloadSpec,
    pub query_mode: QueryMode,
    pub workload_seed: u64,
    pub genetic: GeneticParams,
    pub fitness: FitnessMode,
    pub distributions: Distributions,
    pub baseline: BaselineSpec,
    pub output_dir: PathBuf,
    pub upscale_sizes: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: EXPERIMENT_VERSION,
            dataset: DatasetSpec::UniDense { n: 100_000 },
            workload: WorkloadSpec::Point { domain: Domain::FULL, count: 10_000 },
            query_mode: QueryMode::Materialize,
            workload_seed: 1,
            genetic: GeneticParams::default(),
            fitness: FitnessMode::Measured,
            distributions: Distributions::default(),
            baseline: BaselineSpec::SingleHash,
            output_dir: PathBuf::from("evidx-out"),
            upscale_sizes: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != EXPERIMENT_VERSION {
            bail!("unsupported experiment config version {}, expected {EXPERIMENT_VERSION}", self.version);
        }
        if self.dataset.size() == 0 {
            bail!("dataset size must be positive");
        }
        self.genetic.validate()?;
        if let BaselineSpec::HandSpec { path } = &self.baseline {
            if !path.exists() {
                bail!("baseline config {} does not exist", path.display());
            }
        }
        Ok(())
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"genetic": {"generations": 5}, "dataset": {"kind": "uni_dense", "n": 500}}"#).unwrap();
        assert_eq!(cfg.genetic.generations, 5);
        assert_eq!(cfg.genetic.s_pi, 50);
        assert_eq!(cfg.dataset.size(), 500);
        assert_eq!(cfg.baseline, BaselineSpec::SingleHash);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"genetic": {"c": 2}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"baseline": {"kind": "hand_spec", "path": "/nonexistent/x.json"}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"dataset": {"kind": "uni_dense", "n": 0}}"#).is_err());
    }

    #[test]
    fn dataset_resizing() {
        let d = DatasetSpec::Skewed { n: 10, seed: 3 };
        assert_eq!(d.with_size(20), DatasetSpec::Skewed { n: 20, seed: 3 });
        assert_eq!(d.with_size(20).load().unwrap().len(), 20);
    }
}
