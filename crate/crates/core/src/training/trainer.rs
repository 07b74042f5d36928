//! The training loop: two-phase objective schedule, Adam, learning-rate
//! halving on dev-loss plateaus and best-dev model selection.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objectives::{evaluate, LossInput, Objective, SdrLossOptions, DEFAULT_SDR_EPS};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::sampling::{choose_enrollments, EnrollmentSampling};
use crate::datagen::{derive_seed, Dataset, Item};
use crate::error::{Result, TseError};
use crate::metrics::SdrNumerator;
use crate::model::{init_params, ModelConfig, ModelParams};

const STREAM_INIT: u64 = 0x1000;
const STREAM_EPOCH: u64 = 0x1001;
const STREAM_DEV: u64 = 0x1002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Conventional,
    WorstHard,
    WorstSoft,
    Si,
    WorstHardSi,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::Conventional,
        LossMode::WorstHard,
        LossMode::WorstSoft,
        LossMode::Si,
        LossMode::WorstHardSi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Conventional => "conventional",
            LossMode::WorstHard => "worst_hard",
            LossMode::WorstSoft => "worst_soft",
            LossMode::Si => "si",
            LossMode::WorstHardSi => "worst_hard_si",
        }
    }

    pub fn uses_si(self) -> bool {
        matches!(self, LossMode::Si | LossMode::WorstHardSi)
    }

    pub fn uses_worst(self) -> bool {
        matches!(self, LossMode::WorstHard | LossMode::WorstSoft | LossMode::WorstHardSi)
    }
}

impl std::str::FromStr for LossMode {
    type Err = TseError;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| TseError::Config(format!("unknown loss mode {s:?}")))
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    /// Subset size of the worst-enrollment objectives.
    pub k: usize,
    pub tau: f64,
    pub alpha: f64,
    pub initial_lr: f64,
    pub lr_halving_patience_epochs: usize,
    pub total_epochs: usize,
    pub worst_loss_start_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub enrollment_sampling: EnrollmentSampling,
    pub sdr_numerator: SdrNumerator,
    pub sdr_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Conventional,
            k: 3,
            tau: 2.0,
            alpha: 1.0,
            initial_lr: 5e-4,
            lr_halving_patience_epochs: 3,
            total_epochs: 60,
            worst_loss_start_epoch: 48,
            batch_size: 8,
            seed: 0,
            enrollment_sampling: EnrollmentSampling::Random,
            sdr_numerator: SdrNumerator::Reference,
            sdr_eps: DEFAULT_SDR_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(TseError::Config("k must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(TseError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(TseError::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(TseError::Config("initial_lr must be positive".into()));
        }
        if self.lr_halving_patience_epochs == 0 {
            return Err(TseError::Config("lr_halving_patience_epochs must be positive".into()));
        }
        if self.worst_loss_start_epoch > self.total_epochs {
            return Err(TseError::Config(format!(
                "worst_loss_start_epoch {} exceeds total_epochs {}",
                self.worst_loss_start_epoch, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TseError::Config("batch_size must be positive".into()));
        }
        if !(self.sdr_eps >= 0.0) {
            return Err(TseError::Config("sdr_eps must be non-negative".into()));
        }
        Ok(())
    }

    /// Checks that need the dataset and model as well.
    pub fn validate_against(&self, model: &ModelConfig, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        model.validate()?;
        let n = dataset
            .n_enrollments()
            .ok_or_else(|| TseError::Config("dataset has no mixtures".into()))?;
        if self.loss_mode.uses_worst() && self.k > n {
            return Err(TseError::SubsetTooLarge { k: self.k, n });
        }
        if dataset.train.is_empty() || dataset.dev.is_empty() {
            return Err(TseError::Config("training needs non-empty train and dev splits".into()));
        }
        if self.loss_mode.uses_si() {
            let m = dataset.n_train_speakers();
            if m > model.n_train_speakers {
                return Err(TseError::Config(format!(
                    "dataset has {m} training speakers but the SI head has {} classes",
                    model.n_train_speakers
                )));
            }
            if dataset.train.iter().any(|i| i.speaker_label.is_none()) {
                return Err(TseError::Config("SI training needs speaker labels on every train mixture".into()));
            }
        }
        Ok(())
    }

    pub fn sdr_options(&self) -> SdrLossOptions {
        SdrLossOptions {
            numerator: self.sdr_numerator,
            eps: self.sdr_eps,
        }
    }

    /// Objective in effect during `epoch` (0-based).
    pub fn objective_at(&self, epoch: usize) -> Objective {
        let late = epoch >= self.worst_loss_start_epoch;
        match self.loss_mode {
            LossMode::Conventional => Objective::Sdr,
            LossMode::Si => Objective::Multitask { alpha: self.alpha },
            LossMode::WorstHard if late => Objective::WorstHard,
            LossMode::WorstSoft if late => Objective::WorstSoft { tau: self.tau },
            LossMode::WorstHard | LossMode::WorstSoft => Objective::Sdr,
            LossMode::WorstHardSi if late => Objective::Combined { alpha: self.alpha },
            LossMode::WorstHardSi => Objective::Multitask { alpha: self.alpha },
        }
    }

    /// Enrollments drawn per example under `objective`.
    pub fn enrollments_per_example(&self, objective: Objective) -> usize {
        match objective {
            Objective::Sdr | Objective::Multitask { .. } => 1,
            _ => self.k,
        }
    }

    /// Initial parameters of a run.
    pub fn init(&self, model: &ModelConfig) -> Result<ModelParams> {
        init_params(model, derive_seed(self.seed, STREAM_INIT, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective in effect during the epoch.
    pub objective: String,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
    /// Whether this epoch produced the returned model so far.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `(train_loss, dev_loss, lr)` per epoch, the part that must repeat
    /// exactly across identical runs.
    pub fn loss_values(&self) -> Vec<(f64, f64, f64)> {
        self.records.iter().map(|r| (r.train_loss, r.dev_loss, r.lr)).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
    }
}

/// Everything needed to continue a run after `epochs_completed` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_completed: usize,
    pub lr: f64,
    pub params: ModelParams,
    pub adam: AdamState,
    pub best_params: ModelParams,
    pub best_dev_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(params: ModelParams, lr: f64) -> Self {
        Self {
            epochs_completed: 0,
            lr,
            adam: AdamState::new(&params),
            best_params: params.clone(),
            params,
            best_dev_loss: None,
            best_epoch: None,
            epochs_since_improvement: 0,
            history: TrainHistory::default(),
        }
    }
}

fn enrollment_refs<'a>(dataset: &'a Dataset, item: &Item, picks: &[usize]) -> Vec<&'a crate::signal::Waveform> {
    picks.iter().map(|&j| &dataset.utterances[item.enrollments[j]]).collect()
}

/// Fixed enrollment choice for each dev mixture.
fn dev_picks(cfg: &TrainConfig, dataset: &Dataset, k: usize) -> Result<Vec<Vec<usize>>> {
    dataset
        .dev
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_DEV, i as u64));
            choose_enrollments(EnrollmentSampling::Random, item.enrollments.len(), k, 0, i, &mut rng)
        })
        .collect()
}

/// Mean dev loss under `objective` without its SI term.
pub fn dev_loss(params: &ModelParams, cfg: &TrainConfig, dataset: &Dataset, objective: Objective) -> Result<f64> {
    let objective = objective.without_si();
    let picks = dev_picks(cfg, dataset, cfg.enrollments_per_example(objective))?;
    let mut total = 0.0;
    for (item, p) in dataset.dev.iter().zip(&picks) {
        let input = LossInput {
            target: &item.target,
            mixture: &item.mixture,
            enrollments: enrollment_refs(dataset, item, p),
            label: None,
        };
        total += evaluate(params, &input, objective, cfg.sdr_options(), None)?.total;
    }
    Ok(total / dataset.dev.len() as f64)
}

fn run_epoch(
    state: &mut TrainState,
    cfg: &TrainConfig,
    dataset: &Dataset,
    epoch: usize,
    objective: Objective,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EPOCH, epoch as u64));
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(&mut rng);
    let k = cfg.enrollments_per_example(objective);
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let mut grads = state.params.zeros_like();
        for &i in batch {
            let item = &dataset.train[i];
            let picks = choose_enrollments(cfg.enrollment_sampling, item.enrollments.len(), k, epoch, i, &mut rng)?;
            let input = LossInput {
                target: &item.target,
                mixture: &item.mixture,
                enrollments: enrollment_refs(dataset, item, &picks),
                label: item.speaker_label,
            };
            let v = evaluate(&state.params, &input, objective, cfg.sdr_options(), Some(&mut grads))?;
            if !v.total.is_finite() {
                return Err(TseError::Divergence {
                    epoch,
                    message: format!("non-finite loss on {}", item.id),
                });
            }
            total += v.total;
        }
        grads.scale(1.0 / batch.len() as f64);
        adam_step(&mut state.params, &grads, &mut state.adam, state.lr, adam)?;
        if !state.params.all_finite() {
            return Err(TseError::Divergence {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
    }
    Ok(total / dataset.train.len() as f64)
}

/// Train from scratch; returns the best-dev parameters and the history.
pub fn train(model: &ModelConfig, cfg: &TrainConfig, dataset: &Dataset) -> Result<(ModelParams, TrainHistory)> {
    let state = train_with(model, cfg, dataset, None, |_| Ok(()))?;
    Ok((state.best_params, state.history))
}

/// Train, optionally resuming from `resume`, calling `on_epoch` with the
/// state after every completed epoch.
pub fn train_with(
    model: &ModelConfig,
    cfg: &TrainConfig,
    dataset: &Dataset,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate_against(model, dataset)?;
    let mut state = match resume {
        Some(s) => {
            if s.params.config != *model {
                return Err(TseError::Config("resume checkpoint was trained with a different model config".into()));
            }
            s
        }
        None => TrainState::new(cfg.init(model)?, cfg.initial_lr),
    };
    let adam = AdamConfig::default();
    for epoch in state.epochs_completed..cfg.total_epochs {
        let start = Instant::now();
        let objective = cfg.objective_at(epoch);
        if epoch > 0 && epoch == cfg.worst_loss_start_epoch && cfg.loss_mode.uses_worst() {
            // Best tracking restarts with the worst-enrollment objective.
            state.best_dev_loss = None;
            state.epochs_since_improvement = 0;
        }
        let train_loss = run_epoch(&mut state, cfg, dataset, epoch, objective, &adam)?;
        let dev = dev_loss(&state.params, cfg, dataset, objective)?;
        if !dev.is_finite() {
            return Err(TseError::Divergence {
                epoch,
                message: "non-finite dev loss".into(),
            });
        }
        let lr_used = state.lr;
        let improved = state.best_dev_loss.is_none_or(|b| dev < b);
        if improved {
            state.best_dev_loss = Some(dev);
            state.best_epoch = Some(epoch);
            state.best_params = state.params.clone();
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.lr_halving_patience_epochs {
                state.lr *= 0.5;
                state.epochs_since_improvement = 0;
            }
        }
        state.history.records.push(EpochRecord {
            epoch,
            objective: objective.name().to_string(),
            train_loss,
            dev_loss: dev,
            lr: lr_used,
            wall_time_s: start.elapsed().as_secs_f64(),
            best: improved,
        });
        state.epochs_completed = epoch + 1;
        log::info!(
            "epoch {epoch} [{}] train {train_loss:.3} dev {dev:.3} lr {lr_used:.2e}{}",
            objective.name(),
            if improved { " *" } else { "" }
        );
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Append one JSON line per record to `path`.
pub fn append_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| TseError::io(path, e))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).expect("plain record")).map_err(|e| TseError::io(path, e))?;
    }
    Ok(())
}
