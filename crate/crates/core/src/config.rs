//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::error::{Result, TseError};
use crate::metrics::{SdrNumerator, DEFAULT_FAILURE_THRESHOLD_DB};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    pub sdr_numerator: SdrNumerator,
    pub failure_threshold_db: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            sdr_numerator: SdrNumerator::Reference,
            failure_threshold_db: DEFAULT_FAILURE_THRESHOLD_DB,
        }
    }
}

/// Directory layout. Relative entries other than `workdir` resolve
/// against the workdir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub workdir: PathBuf,
    pub dataset_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("run"),
            dataset_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            eval_dir: PathBuf::from("eval"),
            report_dir: PathBuf::from("reports"),
        }
    }
}

impl Paths {
    fn under_workdir(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.under_workdir(&self.dataset_dir)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.under_workdir(&self.checkpoint_dir)
    }

    pub fn eval(&self) -> PathBuf {
        self.under_workdir(&self.eval_dir)
    }

    pub fn reports(&self) -> PathBuf {
        self.under_workdir(&self.report_dir)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, used for both the dataset master seed and the training seed.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| TseError::Parse {
            location: "config".into(),
            message: e.to_string(),
        })?;
        cfg.apply_seed();
        Ok(cfg)
    }

    /// Load a config file; a relative workdir is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TseError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            TseError::Parse { message, .. } => TseError::Parse {
                location: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        if cfg.paths.workdir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.workdir = base.join(&cfg.paths.workdir);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.dataset.master_seed = s;
            self.train.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.train.loss_mode.uses_worst() && self.train.k > self.dataset.n_enrollments {
            return Err(TseError::SubsetTooLarge {
                k: self.train.k,
                n: self.dataset.n_enrollments,
            });
        }
        if self.train.loss_mode.uses_si() && self.model.n_train_speakers < self.dataset.n_train_speakers {
            return Err(TseError::Config(format!(
                "model.n_train_speakers ({}) is smaller than dataset.n_train_speakers ({})",
                self.model.n_train_speakers, self.dataset.n_train_speakers
            )));
        }
        if !self.metrics.failure_threshold_db.is_finite() {
            return Err(TseError::Config("failure_threshold_db must be finite".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::LossMode;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.validate().is_ok());

        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            [train]
            loss_mode = "worst_hard_si"
            total_epochs = 5
            worst_loss_start_epoch = 4
            [metrics]
            sdr_numerator = "estimate"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.loss_mode, LossMode::WorstHardSi);
        assert_eq!((cfg.dataset.master_seed, cfg.train.seed), (7, 7));
        assert_eq!(cfg.metrics.sdr_numerator, SdrNumerator::Estimate);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_k() {
        assert!(matches!(RunConfig::from_toml("[train]\nbogus = 1"), Err(TseError::Parse { .. })));
        let cfg = RunConfig::from_toml("[train]\nloss_mode = \"worst_hard\"\nk = 11").unwrap();
        assert!(matches!(cfg.validate(), Err(TseError::SubsetTooLarge { k: 11, n: 10 })));
    }

    #[test]
    fn paths_resolve_under_workdir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[paths]\nworkdir = \"w\"\ndataset_dir = \"/abs/data\"").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.paths.workdir, dir.path().join("w"));
        assert_eq!(cfg.paths.dataset(), PathBuf::from("/abs/data"));
        assert_eq!(cfg.paths.checkpoints(), dir.path().join("w/checkpoints"));
    }
}
