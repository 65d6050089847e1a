//! Run configuration: the experiment tree from `isib-core` plus file locations.

use std::fs;
use std::path::{Path, PathBuf};

use isib_core::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data_dir: "data".into(), checkpoint_dir: "checkpoints".into(), report_dir: "reports".into() }
    }
}

/// Top-level configuration file (TOML, or JSON for a `.json` extension).
///
/// Adaptation sizes in `experiment.adapt.sizes` are utterance counts; they
/// replace the hours of speech a real corpus would be measured in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for `gen-data`, `init-centroids` and `train`.
    pub seed: u64,
    pub paths: Paths,
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config { seed: 1, paths: Paths::default(), experiment: ExperimentConfig::default() }
    }
}

impl Config {
    /// Reads and validates `path`; relative paths inside resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::format(path, e))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::format(path, e))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.data_dir, &mut cfg.paths.checkpoint_dir, &mut cfg.paths.report_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate().map_err(|e| CliError::format(path, e))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        Ok(())
    }

    /// Applies a global `--seed`: replaces the single-run seed and shifts the
    /// experiment seeds to `seed, seed + 1, ...` (same count).
    pub fn with_seed(mut self, seed: Option<u64>) -> Config {
        if let Some(s) = seed {
            self.seed = s;
            let n = self.experiment.seeds.len() as u64;
            self.experiment.seeds = (0..n).map(|i| s.wrapping_add(i)).collect();
        }
        self
    }
}
