//! SpeakerBeam-style extractor: speaker embedding network, extraction
//! network adapted by the embedding, and a speaker-identification head.

mod checkpoint;
mod layers;
mod net;
mod params;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::ConvBlock;
pub use net::{SpeakerEmbedding, Tape};
pub use params::{init_bounds, init_params, EmbedParams, ExtractParams, ModelConfig, ModelParams};
