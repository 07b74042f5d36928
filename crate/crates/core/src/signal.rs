//! Waveforms, power arithmetic and ratio-exact mixing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};

/// Default sample rate for generated material.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono sampled audio. Samples are finite and there is at least one of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(TseError::InvalidWaveform("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(TseError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(TseError::InvalidWaveform(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false for a constructed waveform; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sample-wise sum. Lengths and sample rates must agree.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            sample_rate: self.sample_rate,
        })
    }

    fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(TseError::InvalidWaveform(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        if self.len() != other.len() {
            return Err(TseError::Length(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// Mean squared amplitude.
pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

pub fn power_db_ratio(numerator: &[f64], denominator: &[f64]) -> f64 {
    10.0 * (power(numerator) / power(denominator)).log10()
}

/// Gain `g` such that `10·log10(P(reference) / P(g·other)) = ratio_db`.
pub fn ratio_gain(reference: &Waveform, other: &Waveform, ratio_db: f64) -> Result<f64> {
    let p_ref = reference.power();
    let p_other = other.power();
    if p_other <= 0.0 {
        return Err(TseError::ZeroPower("signal to be scaled"));
    }
    if p_ref <= 0.0 {
        return Err(TseError::ZeroPower("reference signal"));
    }
    Ok((p_ref / (p_other * 10f64.powf(ratio_db / 10.0))).sqrt())
}

/// Scale `other` so that its power sits `ratio_db` below `reference`.
pub fn scale_to_ratio(reference: &Waveform, other: &Waveform, ratio_db: f64) -> Result<Waveform> {
    Ok(other.scaled(ratio_gain(reference, other, ratio_db)?))
}

/// The four aligned signals of a simulated mixture plus the ratios used.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
    pub noise: Waveform,
    pub sir_db: f64,
    /// `f64::INFINITY` when noise is disabled.
    pub snr_db: f64,
    pub seed: u64,
}

impl Mixture {
    pub fn achieved_sir_db(&self) -> f64 {
        power_db_ratio(self.target.samples(), self.interferer.samples())
    }

    pub fn achieved_snr_db(&self) -> f64 {
        let speech: Vec<f64> = self
            .target
            .samples()
            .iter()
            .zip(self.interferer.samples())
            .map(|(s, i)| s + i)
            .collect();
        power_db_ratio(&speech, self.noise.samples())
    }
}

/// A mixture with its speaker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub signals: Mixture,
    pub target_speaker_id: String,
    pub interferer_speaker_id: String,
}

impl MixtureExample {
    pub fn new(signals: Mixture, target_speaker_id: String, interferer_speaker_id: String) -> Result<Self> {
        if target_speaker_id == interferer_speaker_id {
            return Err(TseError::Config(format!(
                "target and interferer share speaker id {target_speaker_id}"
            )));
        }
        Ok(Self {
            signals,
            target_speaker_id,
            interferer_speaker_id,
        })
    }
}

/// Truncate from a random offset or tile to exactly `len` samples.
fn fit_length(w: &Waveform, len: usize, rng: &mut impl Rng) -> Waveform {
    let src = w.samples();
    let samples = if src.len() >= len {
        let offset = rng.random_range(0..=src.len() - len);
        src[offset..offset + len].to_vec()
    } else {
        src.iter().copied().cycle().take(len).collect()
    };
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

/// Build `Y = S + I' + N'` with `I'` at `sir_db` below `S` and `N'` at `snr_db`
/// below `S + I'`. Pass `f64::INFINITY` as `snr_db` for a noise-free mixture.
pub fn mix(
    target: &Waveform,
    interferer: &Waveform,
    noise: &Waveform,
    sir_db: f64,
    snr_db: f64,
    seed: u64,
) -> Result<Mixture> {
    for (name, w) in [("target", target), ("interferer", interferer), ("noise", noise)] {
        if w.is_empty() {
            return Err(TseError::Length(format!("{name} has no samples")));
        }
    }
    let sr = target.sample_rate();
    if interferer.sample_rate() != sr || noise.sample_rate() != sr {
        return Err(TseError::InvalidWaveform("sample rates differ".into()));
    }
    if !sir_db.is_finite() {
        return Err(TseError::Config(format!("SIR must be finite, got {sir_db}")));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(TseError::Config(format!("invalid SNR {snr_db}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = target.len();
    let interferer = fit_length(interferer, len, &mut rng);
    let noise = fit_length(noise, len, &mut rng);

    let interferer = scale_to_ratio(target, &interferer, sir_db)?;
    let speech = target.add(&interferer)?;
    let noise = if snr_db == f64::INFINITY {
        Waveform::zeros(len, sr)?
    } else {
        scale_to_ratio(&speech, &noise, snr_db)?
    };
    let mixture = speech.add(&noise)?;

    Ok(Mixture {
        mixture,
        target: target.clone(),
        interferer,
        noise,
        sir_db,
        snr_db,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn wf(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap()
    }

    fn white(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        wf((0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(Waveform::new(vec![f64::INFINITY], 8000).is_err());
    }

    #[test]
    fn power_examples() {
        assert_eq!(wf(vec![0.0; 17]).power(), 0.0);
        assert_eq!(wf(vec![1.0; 9]).power(), 1.0);
        assert_eq!(wf(vec![1.0, -1.0, 1.0, -1.0]).power(), 1.0);
    }

    #[test]
    fn scale_to_ratio_examples() {
        let unit = wf(vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(ratio_gain(&unit, &unit, 0.0).unwrap(), 1.0);
        assert_eq!(scale_to_ratio(&unit, &unit, 0.0).unwrap(), unit);
        assert_relative_eq!(ratio_gain(&unit, &unit, 10.0).unwrap(), 10f64.powf(-0.5), max_relative = 1e-12);
        let four = wf(vec![2.0, -2.0, 2.0, -2.0]);
        assert_relative_eq!(ratio_gain(&four, &unit, 0.0).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn scale_to_ratio_zero_power() {
        let unit = wf(vec![1.0; 4]);
        let zero = wf(vec![0.0; 4]);
        assert!(matches!(scale_to_ratio(&unit, &zero, 0.0), Err(TseError::ZeroPower(_))));
        assert!(matches!(scale_to_ratio(&zero, &unit, 0.0), Err(TseError::ZeroPower(_))));
    }

    #[test]
    fn mix_unit_gain_at_zero_sir() {
        let s = wf(vec![1.0, -1.0, 1.0, -1.0]);
        let i = wf(vec![-1.0, -1.0, 1.0, 1.0]);
        let n = white(4, 3);
        let m = mix(&s, &i, &n, 0.0, 10.0, 0).unwrap();
        assert_eq!(m.interferer, i);
    }

    #[test]
    fn mix_no_noise_sentinel() {
        let s = white(100, 1);
        let i = white(100, 2);
        let n = white(100, 3);
        let m = mix(&s, &i, &n, 3.0, f64::INFINITY, 5).unwrap();
        assert!(m.noise.samples().iter().all(|&x| x == 0.0));
        assert_eq!(m.mixture, s.add(&m.interferer).unwrap());
    }

    #[test]
    fn mix_remeasured_ratios() {
        let s = white(4000, 1);
        let i = white(4000, 2);
        let n = white(4000, 3);
        let m = mix(&s, &i, &n, 5.0, 10.0, 9).unwrap();
        assert!((m.achieved_sir_db() - 5.0).abs() < 0.01);
        assert!((m.achieved_snr_db() - 10.0).abs() < 0.01);
    }

    #[test]
    fn mix_fits_lengths() {
        let s = white(100, 1);
        let long = white(1000, 2);
        let short = white(7, 3);
        let m = mix(&s, &long, &short, 0.0, 5.0, 4).unwrap();
        assert_eq!(m.interferer.len(), 100);
        assert_eq!(m.noise.len(), 100);
        // tiled noise repeats with the short period
        let n = m.noise.samples();
        assert_relative_eq!(n[0], n[7], max_relative = 1e-12);
    }

    #[test]
    fn mix_rejects_mismatched_rates() {
        let s = white(10, 1);
        let i = Waveform::new(vec![1.0; 10], 16000).unwrap();
        assert!(mix(&s, &i, &s, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn mixture_example_rejects_same_speaker() {
        let s = white(10, 1);
        let m = mix(&s, &white(10, 2), &white(10, 3), 0.0, 0.0, 0).unwrap();
        assert!(MixtureExample::new(m.clone(), "a".into(), "a".into()).is_err());
        assert!(MixtureExample::new(m, "a".into(), "b".into()).is_ok());
    }

    proptest! {
        #[test]
        fn mix_is_exact_and_deterministic(
            sir in -5.0f64..5.0,
            snr in 0.0f64..20.0,
            seed in 0u64..1000,
            lens in (50usize..300, 10usize..400, 10usize..400),
        ) {
            let s = white(lens.0, seed);
            let i = white(lens.1, seed + 1);
            let n = white(lens.2, seed + 2);
            let m = mix(&s, &i, &n, sir, snr, seed).unwrap();
            prop_assert!((m.achieved_sir_db() - sir).abs() < 0.01);
            prop_assert!((m.achieved_snr_db() - snr).abs() < 0.01);
            let scale = m.mixture.samples().iter().map(|x| x.abs()).fold(0.0, f64::max);
            for k in 0..m.mixture.len() {
                let sum = m.target.samples()[k] + m.interferer.samples()[k] + m.noise.samples()[k];
                prop_assert!((m.mixture.samples()[k] - sum).abs() <= 1e-6 * scale);
            }
            prop_assert_eq!(m, mix(&s, &i, &n, sir, snr, seed).unwrap());
        }

        #[test]
        fn scale_to_ratio_is_homogeneous(c in 0.01f64..100.0, ratio in -20.0f64..20.0, seed in 0u64..100) {
            let r = white(64, seed);
            let o = white(64, seed + 7);
            let a = scale_to_ratio(&r, &o, ratio).unwrap();
            let b = scale_to_ratio(&r, &o.scaled(c), ratio).unwrap();
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
            }
        }
    }
}
