//! Pipeline configuration.
//!
//! One JSON document drives every command. Hyperparameters default to the
//! training recipe the network ships with; everything that touches
//! reproducibility (the data seed, the step budget) must be written out
//! explicitly, so a config file is a complete record of a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::{derive_seed, DegradationSpec, SceneSpec};
use crate::error::{Error, Result};
use crate::net::NetworkConfig;
use crate::objective::LossConfig;
use crate::tensor::AdamWConfig;

/// Which degradation the pipeline synthesizes and trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LowLight,
    MotionBlur,
    Mosaic,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::LowLight => "low_light",
            Task::MotionBlur => "motion_blur",
            Task::Mosaic => "mosaic",
        }
    }

    /// Stock degradation parameters for the task, used when the config does
    /// not spell out its own. Seeds are filled in per image at synth time.
    pub fn default_degradation(&self) -> DegradationSpec {
        match self {
            Task::LowLight => DegradationSpec::LowLight {
                photon_level: 50.0,
                read_sigma: 0.02,
                gain: 1.0,
                seed: 0,
            },
            Task::MotionBlur => DegradationSpec::MotionBlur {
                kernel_size: 7,
                trajectory_points: 6,
                intensity: 0.7,
                seed: 0,
            },
            Task::Mosaic => DegradationSpec::Mosaic { seed: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr_max")]
    pub lr_max: f64,
    #[serde(default = "default_lr_min")]
    pub lr_min: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Optimizer steps to run. Required: the budget is part of the record.
    /// Zero is allowed and means "emit the initialization as the result".
    pub total_steps: u64,
}

fn default_lr_max() -> f64 {
    3e-4
}
fn default_lr_min() -> f64 {
    1e-6
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_weight_decay() -> f64 {
    1e-5
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn with_steps(total_steps: u64) -> Self {
        Self {
            lr_max: default_lr_max(),
            lr_min: default_lr_min(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            weight_decay: default_weight_decay(),
            eps: default_eps(),
            total_steps,
        }
    }

    /// The AdamW settings this config describes; `lr` starts at `lr_max` and
    /// the training loop re-sets it each step from the cosine schedule.
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr_max,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_max", self.lr_max), ("lr_min", self.lr_min), ("eps", self.eps)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("optimizer {name} must be finite and > 0, got {v}")));
            }
        }
        if self.lr_min > self.lr_max {
            return Err(Error::Config(format!(
                "optimizer lr_min {} exceeds lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("optimizer {name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Synthetic dataset description. Images `0 .. train_scenes` are the training
/// split and `train_scenes .. train_scenes + val_scenes` the validation split,
/// so the splits are disjoint by construction. Per-image scene and degradation
/// seeds are derived from `seed`, which the JSON must state explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_dim")]
    pub height: usize,
    #[serde(default = "default_dim")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    #[serde(default = "default_regions")]
    pub regions: usize,
    #[serde(default = "default_gradient_scale")]
    pub dop_gradient_scale: f64,
    #[serde(default = "default_gradient_scale")]
    pub aop_gradient_scale: f64,
    /// Master seed; everything random in the run derives from it.
    pub seed: u64,
    /// Degradation parameters; the task's stock values when omitted.
    #[serde(default)]
    pub degradation: Option<DegradationSpec>,
}

fn default_dim() -> usize {
    64
}
fn default_channels() -> usize {
    1
}
fn default_regions() -> usize {
    6
}
fn default_gradient_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_path: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("out/dataset"),
            checkpoint_dir: PathBuf::from("out/checkpoints"),
            report_path: PathBuf::from("out/report.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl PipelineConfig {
    /// Parses and validates a config file. Parse and validation failures are
    /// both configuration errors.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.data.channels != self.network.image_channels {
            return Err(Error::Config(format!(
                "data.channels {} must match network.image_channels {}",
                self.data.channels, self.network.image_channels
            )));
        }
        if self.data.height % 4 != 0 || self.data.width % 4 != 0 {
            return Err(Error::Config(format!(
                "data dimensions must be multiples of 4, got {}x{}",
                self.data.height, self.data.width
            )));
        }
        // Scene constraints (even dims >= 16, valid scales) via a probe spec.
        self.scene_spec(0).validate()?;
        let spec = self.degradation_template();
        spec.validate()?;
        if spec.kind() != self.task.name() {
            return Err(Error::Config(format!(
                "task is {} but data.degradation is {}",
                self.task.name(),
                spec.kind()
            )));
        }
        Ok(())
    }

    /// Replaces the master seed (the CLI `--seed` override).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self
    }

    pub fn scene_count(&self) -> usize {
        self.data.train_scenes + self.data.val_scenes
    }

    /// Scene description for image `index`, with its derived seed.
    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        SceneSpec {
            height: self.data.height,
            width: self.data.width,
            channels: self.data.channels,
            regions: self.data.regions,
            dop_gradient_scale: self.data.dop_gradient_scale,
            aop_gradient_scale: self.data.aop_gradient_scale,
            seed: derive_seed(self.data.seed, index as u64, 0),
        }
    }

    /// Degradation parameters without a per-image seed.
    pub fn degradation_template(&self) -> DegradationSpec {
        self.data
            .degradation
            .clone()
            .unwrap_or_else(|| self.task.default_degradation())
    }

    /// Degradation for image `index`, with its derived seed.
    pub fn degradation_spec(&self, index: usize) -> DegradationSpec {
        self.degradation_template().with_seed(derive_seed(self.data.seed, index as u64, 1))
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.data.train_scenes
    }

    pub fn val_indices(&self) -> std::ops::Range<usize> {
        self.data.train_scenes..self.scene_count()
    }
}

#[cfg(test)]
mod tests {
    use tempfile::tempdir;

    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "task": "mosaic",
            "optimizer": { "total_steps": 10 },
            "data": { "train_scenes": 2, "val_scenes": 1, "seed": 7 }
        })
    }

    fn parse(v: serde_json::Value) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_value(v)
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_document_fills_documented_defaults() {
        let cfg = parse(base_json()).unwrap();
        assert_eq!(cfg.task, Task::Mosaic);
        assert_eq!(cfg.optimizer.lr_max, 3e-4);
        assert_eq!(cfg.optimizer.lr_min, 1e-6);
        assert_eq!(cfg.optimizer.beta1, 0.9);
        assert_eq!(cfg.optimizer.beta2, 0.999);
        assert_eq!(cfg.optimizer.weight_decay, 1e-5);
        assert_eq!(cfg.loss.lambda_s, 10.0);
        assert_eq!(cfg.network.base_channels, 8);
        assert_eq!((cfg.data.height, cfg.data.width), (64, 64));
        assert_eq!(cfg.paths.dataset_dir, PathBuf::from("out/dataset"));
        assert_eq!(cfg.degradation_template().kind(), "mosaic");
    }

    #[test]
    fn seed_and_budget_must_be_explicit() {
        let mut v = base_json();
        v["data"].as_object_mut().unwrap().remove("seed");
        assert!(parse(v).is_err());

        let mut v = base_json();
        v["optimizer"].as_object_mut().unwrap().remove("total_steps");
        assert!(parse(v).is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut v = base_json();
        v["learning_rate"] = 1.0.into();
        assert!(parse(v).is_err());

        let mut v = base_json();
        v["optimizer"]["lr_min"] = 1.0.into();
        assert!(matches!(parse(v), Err(Error::Config(_))), "lr_min > lr_max");

        let mut v = base_json();
        v["optimizer"]["beta1"] = 1.0.into();
        assert!(parse(v).is_err());

        let mut v = base_json();
        v["data"]["height"] = 62.into();
        assert!(parse(v).is_err(), "dims must be multiples of 4");

        let mut v = base_json();
        v["data"]["channels"] = 3.into();
        assert!(parse(v).is_err(), "channels must match the network");
    }

    #[test]
    fn task_and_degradation_kind_must_agree() {
        let mut v = base_json();
        v["data"]["degradation"] =
            serde_json::json!({ "kind": "low_light", "photon_level": 50.0, "read_sigma": 0.02, "gain": 1.0 });
        let err = parse(v).err().map(|e| e.to_string()).unwrap();
        assert!(err.contains("task is mosaic"), "{err}");

        let mut v = base_json();
        v["task"] = "low_light".into();
        v["data"]["degradation"] =
            serde_json::json!({ "kind": "low_light", "photon_level": 50.0, "read_sigma": 0.02, "gain": 1.0 });
        assert!(parse(v).is_ok());
    }

    #[test]
    fn derived_specs_are_deterministic_distinct_and_split_disjoint() {
        let cfg = parse(base_json()).unwrap();
        assert_eq!(cfg.scene_spec(0), cfg.scene_spec(0));
        assert_ne!(cfg.scene_spec(0).seed, cfg.scene_spec(1).seed);
        assert_ne!(cfg.scene_spec(0).seed, cfg.degradation_spec(0).seed());

        let train: Vec<_> = cfg.train_indices().collect();
        let val: Vec<_> = cfg.val_indices().collect();
        assert_eq!(train, vec![0, 1]);
        assert_eq!(val, vec![2]);
        assert!(train.iter().all(|i| !val.contains(i)));

        let reseeded = cfg.clone().with_seed(99);
        assert_ne!(reseeded.scene_spec(0).seed, cfg.scene_spec(0).seed);
    }

    #[test]
    fn load_reports_config_errors_with_exit_code_two() {
        let dir = tempdir().unwrap();
        let missing = PipelineConfig::load(dir.path().join("nope.json")).unwrap_err();
        assert_eq!(missing.exit_code(), 2);

        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{not json").unwrap();
        assert_eq!(PipelineConfig::load(&bad).unwrap_err().exit_code(), 2);

        let good = dir.path().join("good.json");
        fs::write(&good, serde_json::to_string_pretty(&base_json()).unwrap()).unwrap();
        let cfg = PipelineConfig::load(&good).unwrap();
        assert_eq!(cfg.data.seed, 7);

        // A config survives a serialize/parse round trip unchanged.
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
