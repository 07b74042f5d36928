//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything returns flat `Vec<f64>` so the page can wrap the results in
//! `Float64Array`s without a serialization layer.

use tse_core::datagen::{noise_source, synth_speaker, synth_utterance, SpeakerPrior};
use tse_core::metrics::sdr;
use tse_core::signal::{mix, DEFAULT_SAMPLE_RATE};
use tse_core::training::{hard_worst, soft_worst, softmax_weights};
use wasm_bindgen::prelude::*;

fn js_err(e: tse_core::TseError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn sample_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}

/// Base pitch in Hz of the speaker drawn from `speaker_seed`.
#[wasm_bindgen]
pub fn speaker_f0(speaker_seed: u64) -> f64 {
    synth_speaker("demo", speaker_seed, &SpeakerPrior::default()).f0_base
}

/// One utterance of a synthetic speaker. Different `utterance_seed`s give
/// the same voice with utterance-level variation scaled by `variability`
/// (0 gives identical voice parameters every time).
#[wasm_bindgen]
pub fn synth_voice(speaker_seed: u64, utterance_seed: u64, duration_s: f64, variability: f64) -> Result<Vec<f64>, JsError> {
    let mut profile = synth_speaker("demo", speaker_seed, &SpeakerPrior::default());
    profile.intra_speaker_sigma = variability.max(0.0);
    Ok(synth_utterance(&profile, duration_s, DEFAULT_SAMPLE_RATE, utterance_seed)
        .map_err(js_err)?
        .into_samples())
}

/// Mix two synthetic speakers and low-pass noise at the requested ratios.
///
/// Returns `[sir, snr, sdr_of_mixture, mixture..., target...]`: three
/// measured values followed by two signals of equal length.
#[wasm_bindgen]
pub fn mix_speakers(target_seed: u64, interferer_seed: u64, sir_db: f64, snr_db: f64, duration_s: f64) -> Result<Vec<f64>, JsError> {
    let sr = DEFAULT_SAMPLE_RATE;
    let prior = SpeakerPrior::default();
    let t = synth_utterance(&synth_speaker("t", target_seed, &prior), duration_s, sr, target_seed ^ 0x5eed).map_err(js_err)?;
    let i = synth_utterance(&synth_speaker("i", interferer_seed, &prior), duration_s, sr, interferer_seed ^ 0x5eed)
        .map_err(js_err)?;
    let n = noise_source(target_seed.wrapping_add(interferer_seed), duration_s, sr).map_err(js_err)?;
    let m = mix(&t, &i, &n, sir_db, snr_db, 0).map_err(js_err)?;
    let mut out = vec![m.achieved_sir_db(), m.achieved_snr_db(), sdr(&m.target, &m.mixture).map_err(js_err)?];
    out.extend_from_slice(m.mixture.samples());
    out.extend_from_slice(m.target.samples());
    Ok(out)
}

/// Soft worst-enrollment weights for `losses` at temperature `tau`,
/// followed by the soft loss, the hard (max) loss and the mean.
#[wasm_bindgen]
pub fn worst_weights(losses: &[f64], tau: f64) -> Result<Vec<f64>, JsError> {
    let (soft, _) = soft_worst(losses, tau).map_err(js_err)?;
    let (hard, _) = hard_worst(losses).map_err(js_err)?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let mut out = softmax_weights(losses, tau);
    out.extend([soft, hard, mean]);
    Ok(out)
}

/// Soft loss at `n_points` temperatures log-spaced over [`tau_min`, `tau_max`].
#[wasm_bindgen]
pub fn soft_curve(losses: &[f64], tau_min: f64, tau_max: f64, n_points: usize) -> Result<Vec<f64>, JsError> {
    if !(tau_min > 0.0 && tau_max > tau_min) || n_points < 2 {
        return Err(JsError::new("need 0 < tau_min < tau_max and at least two points"));
    }
    let (a, b) = (tau_min.ln(), tau_max.ln());
    (0..n_points)
        .map(|k| {
            let tau = (a + (b - a) * k as f64 / (n_points - 1) as f64).exp();
            soft_worst(losses, tau).map(|(v, _)| v).map_err(js_err)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_reports_requested_ratios() {
        let out = mix_speakers(1, 2, -3.0, 10.0, 0.5).unwrap();
        assert!((out[0] + 3.0).abs() < 1e-9);
        assert!((out[1] - 10.0).abs() < 1e-9);
        let len = (out.len() - 3) / 2;
        assert_eq!(len, 4000);
    }

    #[test]
    fn weights_sum_to_one_and_bracket() {
        let out = worst_weights(&[-10.0, -4.0, -7.0], 2.0).unwrap();
        assert!((out[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (soft, hard, mean) = (out[3], out[4], out[5]);
        assert!(mean <= soft && soft <= hard);
        let curve = soft_curve(&[-10.0, -4.0, -7.0], 1e-3, 1e3, 20).unwrap();
        assert!((curve[0] - hard).abs() < 1e-6);
        assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn voices_repeat_per_seed() {
        assert_eq!(synth_voice(3, 4, 0.2, 0.05).unwrap(), synth_voice(3, 4, 0.2, 0.05).unwrap());
        assert_ne!(synth_voice(3, 4, 0.2, 0.05).unwrap(), synth_voice(3, 5, 0.2, 0.05).unwrap());
        assert!(speaker_f0(3) >= 80.0 && speaker_f0(3) <= 320.0);
    }
}
