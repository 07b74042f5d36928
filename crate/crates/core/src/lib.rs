//! Target speech extraction with enrollment-robust training.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`signal`] and [`wav`]: waveforms, power arithmetic, SIR/SNR-exact mixing, WAV I/O.
//! - [`datagen`]: a synthetic speaker corpus and mixture datasets with N enrollment
//!   candidates per mixture.
//! - [`metrics`]: SDR, SDRi, n-th-worst enrollment statistics, failure ratio.
//! - [`model`]: a small SpeakerBeam-style extractor (embedding network, conditioned
//!   extraction network, speaker-identification head) with hand-written gradients.
//! - [`training`]: random-enrollment, hard/soft worst-enrollment and SI multitask
//!   objectives, Adam, and the training loop.
//! - [`analysis`]: evaluation matrices, embedding variance ratio, system comparison.
//! - [`config`]: the TOML run configuration shared by the command-line tools.

pub mod analysis;
pub mod config;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod training;
pub mod wav;

pub use error::{Result, TseError};
pub use signal::Waveform;
