//! Synthetic speaker corpus and mixture dataset construction.

mod dataset;
mod speaker;

pub use dataset::{
    build_dataset, derive_seed, generate, Corpus, CorpusMixture, Dataset, DatasetManifest, DatasetSpec,
    EnrollmentRef, Item, ManifestRecord, Split, Utterance, MANIFEST_FILE,
};
pub use speaker::{
    noise_source, synth_speaker, synth_utterance, SpeakerPrior, SpeakerProfile, VoiceState, F0_MAX_HZ, F0_MIN_HZ,
    NOISE_CUTOFF_FRACTION, PEAK_LEVEL,
};
