//! Experiment configuration, stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::dataset_io::DatasetSpec;
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_NORMAL_K;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "PCSEMCOM_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    /// Channel SNR used while training with noise.
    pub snr_db: f64,
    /// Draw a fresh SNR per batch from `snr_range_db` instead of `snr_db`
    /// (experimental).
    pub randomize_snr: bool,
    pub snr_range_db: (f64, f64),
    /// Stop once the epoch mean loss falls to this fraction of the first
    /// epoch's; 0 disables.
    pub stop_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch: 8,
            stage1_epochs: 200,
            stage2_epochs: 100,
            snr_db: 0.0,
            randomize_snr: false,
            snr_range_db: (0.0, 10.0),
            stop_ratio: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub snrs_db: Vec<f64>,
    /// Per-block success probability of the lossless side channel.
    pub success_p: f64,
    pub normal_k: usize,
    /// Record wall-clock milliseconds per sweep point (breaks byte-identical
    /// CSVs).
    pub timing: bool,
    pub dump_ply: bool,
    pub dump_views: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snrs_db: vec![10.0, 5.0, 0.0],
            success_p: 0.9,
            normal_k: DEFAULT_NORMAL_K,
            timing: false,
            dump_ply: false,
            dump_views: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub model: CodecConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults on the procedural shapes.
    pub fn toy() -> Self {
        let model = CodecConfig::default();
        let dataset = DatasetSpec {
            points: model.points,
            range: model.range,
            ..DatasetSpec::default()
        };
        Self {
            output_dir: PathBuf::from("runs"),
            model,
            train: TrainConfig::default(),
            dataset,
            eval: EvalConfig::default(),
        }
    }

    /// Published scale: N=8192, S=64, 224x224 views, batch 24.
    pub fn paper() -> Self {
        let mut c = Self::toy();
        c.model = CodecConfig {
            points: 8192,
            patches: 64,
            image: 224,
            cnn_features: 512,
            ..CodecConfig::default()
        };
        c.dataset.points = 8192;
        c.train.batch = 24;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?} (toy, paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.dataset.points != self.model.points {
            return Err(Error::Config(format!(
                "dataset.points = {} but model.points = {}",
                self.dataset.points, self.model.points
            )));
        }
        if self.dataset.range != self.model.range {
            return Err(Error::Config("dataset.range and model.range differ".into()));
        }
        if self.train.batch == 0 {
            return Err(Error::Config("train.batch must be at least 1".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if self.train.snr_db.is_nan() {
            return Err(Error::Config("train.snr_db is NaN".into()));
        }
        if !(0.0..1.0).contains(&self.train.stop_ratio) {
            return Err(Error::Config("train.stop_ratio must lie in [0, 1)".into()));
        }
        if !(self.eval.success_p > 0.0 && self.eval.success_p <= 1.0) {
            return Err(Error::Config("eval.success_p must lie in (0, 1]".into()));
        }
        if self.eval.normal_k < 3 {
            return Err(Error::Config("eval.normal_k must be at least 3".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for cfg in [ExperimentConfig::toy(), ExperimentConfig::paper()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
        let mut c = ExperimentConfig::toy();
        c.train.snr_db = f64::INFINITY;
        c.dataset.root = Some("/data/modelnet".into());
        c.eval.snrs_db = vec![f64::INFINITY, -3.5];
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_files_use_defaults() {
        let c = ExperimentConfig::from_toml("[train]\nlr = 0.001\n").unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.model, CodecConfig::default());
    }

    #[test]
    fn invalid_files_are_rejected() {
        assert!(ExperimentConfig::from_toml("[model]\npatches = 24\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\npoints = 512\n").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nbatch = 0\n").is_err());
        assert!(ExperimentConfig::preset("huge").is_err());
    }
}
