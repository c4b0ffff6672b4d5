//! Experiment configuration: one JSON document with `data`, `train`, `calibrate` and
//! `evaluate` sections under a single seed. Unknown keys are rejected.

use std::path::Path;

use avuc_core::metrics::EvalOptions;
use avuc_core::posthoc::Objective;
use avuc_core::shiftlab::{self, Dataset};
use avuc_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoMoons,
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub generator: Generator,
    pub n: usize,
    /// Two-moons noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Blob standard deviation.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_ood_n")]
    pub ood_n: usize,
}

fn default_noise() -> f64 {
    0.1
}
fn default_classes() -> usize {
    3
}
fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    1.0
}
fn default_ood_n() -> usize {
    200
}

impl DataSection {
    pub fn generate(&self, seed: u64) -> avuc_core::Result<Dataset> {
        match self.generator {
            Generator::TwoMoons => shiftlab::make_two_moons(self.n, self.noise, seed),
            Generator::Blobs => shiftlab::make_blobs(self.n, self.classes, self.dim, self.spread, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub objective: Objective,
    pub mc_samples: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            objective: Objective::Avuc,
            mc_samples: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub mc_samples: usize,
    pub bins: usize,
    pub t_grid_points: usize,
    pub hist_bins: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            mc_samples: 32,
            bins: o.bins,
            t_grid_points: o.t_grid_points,
            hist_bins: o.hist_bins,
        }
    }
}

impl EvaluateSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            bins: self.bins,
            t_grid_points: self.t_grid_points,
            hist_bins: self.hist_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.normalize()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The top-level seed drives training; a conflicting `train.seed` is an error.
    fn normalize(&mut self) -> Result<(), CliError> {
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err(CliError::Config(
                "train.seed differs from the top-level seed; set only the top-level one".into(),
            ));
        }
        self.train.seed = self.seed;
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.calibrate.mc_samples == 0 || self.evaluate.mc_samples == 0 {
            return Err(CliError::Config("mc_samples must be at least 1".into()));
        }
        if self.evaluate.bins == 0 || self.evaluate.hist_bins == 0 {
            return Err(CliError::Config("bins must be at least 1".into()));
        }
        if self.evaluate.t_grid_points < 2 {
            return Err(CliError::Config("t_grid_points must be at least 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "data": {"generator": "two_moons", "n": 200},
        "train": {"method": "svi-avuc", "epochs": 5, "batch_size": 32, "lr": 0.01}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.evaluate.mc_samples, 32);
        assert_eq!(cfg.evaluate.bins, 15);
        assert_eq!(cfg.calibrate.objective, Objective::Avuc);
    }

    #[test]
    fn unknown_keys_fail() {
        let bad = MINIMAL.replace("\"n\": 200", "\"n\": 200, \"colour\": 1");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(CliError::Config(_))));
        let bad = MINIMAL.replace("\"seed\": 3,", "\"seed\": 3, \"evaluate\": {\"bogus\": 1},");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("\"lr\": 0.01", "\"lr\": 0.01, \"seed\": 9");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }
}
