//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::objectives::{evaluate, loss_and_grad, LossInput, Objective, SdrLossOptions};
use crate::error::Result;
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::signal::Waveform;

/// Relative error with an absolute floor on the scale, so gradients that
/// are zero analytically compare against finite-difference noise sensibly.
pub const REL_ERROR_FLOOR: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    /// Position within the tensor in row-major order.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub objective: String,
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compare analytic and numeric derivatives on `n_samples` parameters:
/// one from every tensor, the rest uniformly over all scalars.
pub fn check_gradients(
    params: &ModelParams,
    input: &LossInput<'_>,
    objective: Objective,
    opts: SdrLossOptions,
    n_samples: usize,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(params, input, objective, opts)?;
    let analytic = grads.to_flat();
    let sizes: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, (_, n)| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let total = analytic.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sizes
        .iter()
        .zip(&offsets)
        .map(|((_, n), o)| o + rng.random_range(0..*n))
        .collect();
    while picks.len() < n_samples {
        picks.push(rng.random_range(0..total));
    }

    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(picks.len());
    for flat in picks {
        let orig = *probe.flat_get_mut(flat).expect("index in range");
        *probe.flat_get_mut(flat).expect("index in range") = orig + step;
        let up = evaluate(&probe, input, objective, opts, None)?.total;
        *probe.flat_get_mut(flat).expect("index in range") = orig - step;
        let down = evaluate(&probe, input, objective, opts, None)?.total;
        *probe.flat_get_mut(flat).expect("index in range") = orig;
        let numeric = (up - down) / (2.0 * step);
        let t = offsets.partition_point(|&o| o <= flat) - 1;
        entries.push(GradCheckEntry {
            tensor: sizes[t].0.clone(),
            index: flat - offsets[t],
            analytic: analytic[flat],
            numeric,
            rel_error: relative_error(analytic[flat], numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        objective: objective.name().to_string(),
        entries,
        max_rel_error,
    })
}

/// The small configuration the suite runs on.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        encoder_channels: 6,
        n_blocks_embed: 1,
        n_blocks_extract_per_repeat: 1,
        n_repeats: 2,
        kernel_size: 3,
        frame_size: 8,
        hop: 4,
        n_train_speakers: 3,
        normalize_enrollment: true,
        normalize_mixture: true,
    }
}

fn random_signal(rng: &mut ChaCha8Rng, len: usize, gain: f64) -> Waveform {
    let s = (0..len).map(|_| gain * rng.sample::<f64, _>(StandardNormal)).collect();
    Waveform::new(s, crate::signal::DEFAULT_SAMPLE_RATE).expect("finite samples")
}

/// Run every loss through [`check_gradients`] on random 200-sample signals.
pub fn gradcheck_suite(seed: u64, n_samples: usize) -> Result<Vec<GradCheckReport>> {
    let cfg = gradcheck_config();
    let params = init_params(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let len = 200;
    let target = random_signal(&mut rng, len, 0.3);
    let interferer = random_signal(&mut rng, len, 0.3);
    let mixture = target.add(&interferer)?;
    let enrollments: Vec<Waveform> = (0..3).map(|_| random_signal(&mut rng, len, 0.3)).collect();
    let all: Vec<&Waveform> = enrollments.iter().collect();
    let opts = SdrLossOptions::default();

    let cases = [
        (Objective::Sdr, 1),
        (Objective::WorstHard, 3),
        (Objective::WorstSoft { tau: 2.0 }, 3),
        (Objective::Multitask { alpha: 1.0 }, 1),
        (Objective::Combined { alpha: 1.0 }, 3),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, &(objective, k))| {
            let input = LossInput {
                target: &target,
                mixture: &mixture,
                enrollments: all[..k].to_vec(),
                label: Some(1),
            };
            check_gradients(&params, &input, objective, opts, n_samples, seed + i as u64, DEFAULT_STEP)
        })
        .collect()
}
