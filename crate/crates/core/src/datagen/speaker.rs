//! Synthetic voices: a harmonic source shaped by a few resonances.
//!
//! Every speaker has a base pitch, a set of resonance centres and a spectral
//! tilt. Each utterance perturbs those base parameters by a speaker-specific
//! amount (`intra_speaker_sigma`), so two recordings of the same voice never
//! match exactly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::signal::Waveform;

pub const F0_MIN_HZ: f64 = 80.0;
pub const F0_MAX_HZ: f64 = 320.0;

/// Peak amplitude of every synthesized utterance.
pub const PEAK_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub f0_base: f64,
    pub resonance_centers: Vec<f64>,
    pub resonance_bandwidths: Vec<f64>,
    /// Harmonic amplitude slope, dB per octave (negative).
    pub harmonic_rolloff: f64,
    pub intra_speaker_sigma: f64,
}

/// Distribution the speaker parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPrior {
    /// `intra_speaker_sigma` is uniform in this range. `[0, 0]` disables jitter.
    pub intra_speaker_sigma_range: [f64; 2],
    pub sample_rate: u32,
}

impl Default for SpeakerPrior {
    fn default() -> Self {
        Self {
            intra_speaker_sigma_range: [0.03, 0.12],
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw a speaker.
///
/// - `f0_base` is log-uniform on [80, 320] Hz.
/// - three resonances in the bands 300–900, 900–2200 and 2200–3400 Hz
///   (scaled down when they would exceed 0.45 × sample rate), bandwidth
///   10–25 % of the centre frequency.
/// - rolloff uniform on [−9, −3] dB/octave.
pub fn synth_speaker(speaker_id: impl Into<String>, seed: u64, prior: &SpeakerPrior) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0_base = (F0_MIN_HZ.ln() + rng.random::<f64>() * (F0_MAX_HZ / F0_MIN_HZ).ln()).exp();
    let limit = 0.45 * prior.sample_rate as f64;
    let bands = [(300.0, 900.0), (900.0, 2200.0), (2200.0, 3400.0)];
    let squeeze = (limit / 3400.0).min(1.0);
    let resonance_centers: Vec<f64> = bands
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..hi) * squeeze)
        .collect();
    let resonance_bandwidths = resonance_centers
        .iter()
        .map(|c| c * rng.random_range(0.10..0.25))
        .collect();
    let harmonic_rolloff = rng.random_range(-9.0..-3.0);
    let [lo, hi] = prior.intra_speaker_sigma_range;
    let intra_speaker_sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
    SpeakerProfile {
        speaker_id: speaker_id.into(),
        f0_base,
        resonance_centers,
        resonance_bandwidths,
        harmonic_rolloff,
        intra_speaker_sigma,
    }
}

/// Per-utterance realisation of a profile's voice parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceState {
    pub f0: f64,
    pub resonance_centers: Vec<f64>,
    pub resonance_bandwidths: Vec<f64>,
    pub harmonic_rolloff: f64,
}

impl SpeakerProfile {
    /// Jittered voice parameters; identical to the base ones when sigma is 0.
    pub fn utterance_voice(&self, rng: &mut impl Rng) -> VoiceState {
        let sigma = self.intra_speaker_sigma;
        let f0 = (self.f0_base * (sigma * normal(rng)).exp()).clamp(F0_MIN_HZ * 0.8, F0_MAX_HZ * 1.2);
        let resonance_centers = self
            .resonance_centers
            .iter()
            .map(|c| c * (0.7 * sigma * normal(rng)).exp())
            .collect();
        let harmonic_rolloff = self.harmonic_rolloff + 20.0 * sigma * normal(rng);
        VoiceState {
            f0,
            resonance_centers,
            resonance_bandwidths: self.resonance_bandwidths.clone(),
            harmonic_rolloff,
        }
    }
}

fn resonance_gain(freq: f64, centers: &[f64], bandwidths: &[f64]) -> f64 {
    centers
        .iter()
        .zip(bandwidths)
        .map(|(c, b)| {
            let x = (freq - c) / (0.5 * b);
            1.0 / (1.0 + x * x).sqrt()
        })
        .sum()
}

/// Synthesize one utterance of `duration_s` seconds.
///
/// The pitch follows a mean-reverting random walk around the jittered base
/// value; the signal is organised in syllables of 90–220 ms, each with its
/// own small resonance shift and a raised-cosine envelope.
pub fn synth_utterance(profile: &SpeakerProfile, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let len = (duration_s * sample_rate as f64).round();
    if !(len >= 1.0) {
        return Err(TseError::Duration(format!(
            "{duration_s} s at {sample_rate} Hz is shorter than one sample"
        )));
    }
    let len = len as usize;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = profile.utterance_voice(&mut rng);
    let nyquist_guard = 0.45 * sr;

    // syllable boundaries
    let mut syllables = Vec::new();
    let mut start = 0usize;
    while start < len {
        let dur = (rng.random_range(0.09..0.22) * sr) as usize;
        let gap = (rng.random_range(0.0..0.05) * sr) as usize;
        let end = (start + dur.max(1)).min(len);
        let shift: Vec<f64> = voice
            .resonance_centers
            .iter()
            .map(|_| (0.08 * normal(&mut rng)).exp())
            .collect();
        let level = rng.random_range(0.6..1.0);
        syllables.push((start, end, shift, level));
        start = end + gap;
    }

    const BLOCK: usize = 40;
    let mut out = vec![0.0; len];
    let mut phase = 0.0f64;
    let mut log_dev = 0.0f64;
    let mut amps: Vec<f64> = Vec::new();
    for (s0, s1, shift, level) in &syllables {
        let centers: Vec<f64> = voice
            .resonance_centers
            .iter()
            .zip(shift)
            .map(|(c, k)| (c * k).min(nyquist_guard))
            .collect();
        let slen = (s1 - s0) as f64;
        let mut b0 = *s0;
        while b0 < *s1 {
            let b1 = (b0 + BLOCK).min(*s1);
            log_dev = 0.9 * log_dev + 0.02 * normal(&mut rng);
            let f0 = voice.f0 * log_dev.exp();
            let n_harm = (nyquist_guard / f0).floor().max(1.0) as usize;
            amps.clear();
            amps.extend((1..=n_harm).map(|h| {
                let hf = h as f64;
                10f64.powf(voice.harmonic_rolloff * hf.log2() / 20.0)
                    * resonance_gain(hf * f0, &centers, &voice.resonance_bandwidths)
            }));
            let dphi = 2.0 * PI * f0 / sr;
            for (t, o) in out.iter_mut().enumerate().take(b1).skip(b0) {
                phase = (phase + dphi) % (2.0 * PI);
                let env = 0.5 - 0.5 * (2.0 * PI * (t - s0) as f64 / slen).cos();
                let v: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(h, a)| a * ((h + 1) as f64 * phase).sin())
                    .sum();
                *o = v * env * level;
            }
            b0 = b1;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(out, sample_rate)
}

/// Default cutoff of the noise low-pass filter, as a fraction of the sample rate.
pub const NOISE_CUTOFF_FRACTION: f64 = 0.08;

/// One-pole low-pass filtered white noise, normalised to unit power.
pub fn noise_source(seed: u64, duration_s: f64, sample_rate: u32) -> Result<Waveform> {
    let len = (duration_s * sample_rate as f64).round();
    if !(len >= 1.0) {
        return Err(TseError::Duration(format!(
            "{duration_s} s at {sample_rate} Hz is shorter than one sample"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (-2.0 * PI * NOISE_CUTOFF_FRACTION).exp();
    let mut y = 0.0;
    let mut out: Vec<f64> = (0..len as usize)
        .map(|_| {
            y = a * y + (1.0 - a) * normal(&mut rng);
            y
        })
        .collect();
    let p = crate::signal::power(&out);
    if p > 0.0 {
        let g = p.sqrt().recip();
        out.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(out, sample_rate)
}
