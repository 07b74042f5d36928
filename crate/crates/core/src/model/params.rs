use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvBlock;
use crate::error::{Result, TseError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Speaker embedding size D.
    pub embedding_dim: usize,
    pub encoder_channels: usize,
    pub n_blocks_embed: usize,
    pub n_blocks_extract_per_repeat: usize,
    pub n_repeats: usize,
    pub kernel_size: usize,
    pub frame_size: usize,
    pub hop: usize,
    /// Number of classes of the speaker-identification head (M).
    pub n_train_speakers: usize,
    /// Scale enrollments to unit RMS before embedding.
    pub normalize_enrollment: bool,
    /// Scale the mixture to unit RMS before encoding and restore the scale
    /// at the output, making extraction scale-equivariant.
    pub normalize_mixture: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            encoder_channels: 64,
            n_blocks_embed: 4,
            n_blocks_extract_per_repeat: 4,
            n_repeats: 2,
            kernel_size: 3,
            frame_size: 40,
            hop: 20,
            n_train_speakers: 16,
            normalize_enrollment: true,
            normalize_mixture: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("encoder_channels", self.encoder_channels),
            ("n_blocks_embed", self.n_blocks_embed),
            ("n_blocks_extract_per_repeat", self.n_blocks_extract_per_repeat),
            ("n_repeats", self.n_repeats),
            ("kernel_size", self.kernel_size),
            ("frame_size", self.frame_size),
            ("hop", self.hop),
            ("n_train_speakers", self.n_train_speakers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TseError::Config(format!("{name} must be positive")));
            }
        }
        if self.embedding_dim < 2 {
            return Err(TseError::Config("embedding_dim must be at least 2".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(TseError::Config("kernel_size must be odd".into()));
        }
        if self.hop > self.frame_size {
            return Err(TseError::Config("hop must not exceed frame_size".into()));
        }
        Ok(())
    }
}

/// Parameters of the speaker embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    /// `channels × frame_size`.
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub blocks: Vec<ConvBlock>,
    /// `embedding_dim × channels`.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

/// Parameters of the extraction network.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractParams {
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    /// `n_repeats × n_blocks_extract_per_repeat` blocks, repeat-major.
    pub blocks: Vec<ConvBlock>,
    /// `channels × embedding_dim`: speaker adaptation weights.
    pub cond_w: Array2<f64>,
    pub cond_b: Array1<f64>,
    pub mask_w: Array2<f64>,
    pub mask_b: Array1<f64>,
    /// `frame_size × channels` decoder basis.
    pub dec_w: Array2<f64>,
}

/// All learnable parameters. The same type doubles as a gradient and as
/// an optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: EmbedParams,
    pub extract: ExtractParams,
    /// `n_train_speakers × embedding_dim` speaker-identification projection.
    pub si_w: Array2<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.encoder_channels;
        let d = config.embedding_dim;
        let k = config.kernel_size;
        let n_ext = config.n_repeats * config.n_blocks_extract_per_repeat;
        Self {
            config: config.clone(),
            embed: EmbedParams {
                enc_w: Array2::zeros((c, config.frame_size)),
                enc_b: Array1::zeros(c),
                blocks: (0..config.n_blocks_embed).map(|_| ConvBlock::zeros(c, k)).collect(),
                proj_w: Array2::zeros((d, c)),
                proj_b: Array1::zeros(d),
            },
            extract: ExtractParams {
                enc_w: Array2::zeros((c, config.frame_size)),
                enc_b: Array1::zeros(c),
                blocks: (0..n_ext).map(|_| ConvBlock::zeros(c, k)).collect(),
                cond_w: Array2::zeros((c, d)),
                cond_b: Array1::zeros(c),
                mask_w: Array2::zeros((c, c)),
                mask_b: Array1::zeros(c),
                dec_w: Array2::zeros((config.frame_size, c)),
            },
            si_w: Array2::zeros((config.n_train_speakers, d)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        let e = &self.embed;
        out.push(("embed.enc_w".to_string(), e.enc_w.view().into_dyn()));
        out.push(("embed.enc_b".to_string(), e.enc_b.view().into_dyn()));
        for (i, b) in e.blocks.iter().enumerate() {
            push_block(&mut out, &format!("embed.blocks.{i}"), b);
        }
        out.push(("embed.proj_w".to_string(), e.proj_w.view().into_dyn()));
        out.push(("embed.proj_b".to_string(), e.proj_b.view().into_dyn()));
        let x = &self.extract;
        out.push(("extract.enc_w".to_string(), x.enc_w.view().into_dyn()));
        out.push(("extract.enc_b".to_string(), x.enc_b.view().into_dyn()));
        for (i, b) in x.blocks.iter().enumerate() {
            push_block(&mut out, &format!("extract.blocks.{i}"), b);
        }
        out.push(("extract.cond_w".to_string(), x.cond_w.view().into_dyn()));
        out.push(("extract.cond_b".to_string(), x.cond_b.view().into_dyn()));
        out.push(("extract.mask_w".to_string(), x.mask_w.view().into_dyn()));
        out.push(("extract.mask_b".to_string(), x.mask_b.view().into_dyn()));
        out.push(("extract.dec_w".to_string(), x.dec_w.view().into_dyn()));
        out.push(("si_w".to_string(), self.si_w.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        let e = &mut self.embed;
        out.push(("embed.enc_w".to_string(), e.enc_w.view_mut().into_dyn()));
        out.push(("embed.enc_b".to_string(), e.enc_b.view_mut().into_dyn()));
        for (i, b) in e.blocks.iter_mut().enumerate() {
            push_block_mut(&mut out, &format!("embed.blocks.{i}"), b);
        }
        out.push(("embed.proj_w".to_string(), e.proj_w.view_mut().into_dyn()));
        out.push(("embed.proj_b".to_string(), e.proj_b.view_mut().into_dyn()));
        let x = &mut self.extract;
        out.push(("extract.enc_w".to_string(), x.enc_w.view_mut().into_dyn()));
        out.push(("extract.enc_b".to_string(), x.enc_b.view_mut().into_dyn()));
        for (i, b) in x.blocks.iter_mut().enumerate() {
            push_block_mut(&mut out, &format!("extract.blocks.{i}"), b);
        }
        out.push(("extract.cond_w".to_string(), x.cond_w.view_mut().into_dyn()));
        out.push(("extract.cond_b".to_string(), x.cond_b.view_mut().into_dyn()));
        out.push(("extract.mask_w".to_string(), x.mask_w.view_mut().into_dyn()));
        out.push(("extract.mask_b".to_string(), x.mask_b.view_mut().into_dyn()));
        out.push(("extract.dec_w".to_string(), x.dec_w.view_mut().into_dyn()));
        out.push(("si_w".to_string(), self.si_w.view_mut().into_dyn()));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flat copy of every parameter in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(TseError::Shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut it = flat.iter();
        for (_, mut t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Mutable reference to the `index`-th scalar in flat order.
    pub fn flat_get_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for (_, t) in self.tensors_mut() {
            if index < t.len() {
                return t.into_iter().nth(index);
            }
            index -= t.len();
        }
        None
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Set every bias vector to zero.
    pub fn zero_biases(&mut self) {
        for (name, mut t) in self.tensors_mut() {
            if name.ends_with("_b") {
                t.fill(0.0);
            }
        }
    }
}

fn push_block<'a>(out: &mut Vec<(String, ArrayViewD<'a, f64>)>, prefix: &str, b: &'a ConvBlock) {
    out.push((format!("{prefix}.dw_w"), b.dw_w.view().into_dyn()));
    out.push((format!("{prefix}.dw_b"), b.dw_b.view().into_dyn()));
    out.push((format!("{prefix}.pw_w"), b.pw_w.view().into_dyn()));
    out.push((format!("{prefix}.pw_b"), b.pw_b.view().into_dyn()));
}

fn push_block_mut<'a>(out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>, prefix: &str, b: &'a mut ConvBlock) {
    out.push((format!("{prefix}.dw_w"), b.dw_w.view_mut().into_dyn()));
    out.push((format!("{prefix}.dw_b"), b.dw_b.view_mut().into_dyn()));
    out.push((format!("{prefix}.pw_w"), b.pw_w.view_mut().into_dyn()));
    out.push((format!("{prefix}.pw_b"), b.pw_b.view_mut().into_dyn()));
}

/// Fan-in of the layer a tensor belongs to.
fn fan_in(name: &str, config: &ModelConfig) -> usize {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match leaf {
        "enc_w" | "enc_b" => config.frame_size,
        "dw_w" | "dw_b" => config.kernel_size,
        "cond_w" | "cond_b" | "si_w" => config.embedding_dim,
        _ => config.encoder_channels,
    }
}

/// Uniform initialisation in `[-a, a]`, `a = 1/sqrt(fan_in)`, for every
/// weight and bias. The conditioning bias is centred on 1 so the adapted
/// features start close to the unadapted ones.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, mut t) in params.tensors_mut() {
        let a = 1.0 / (fan_in(&name, config) as f64).sqrt();
        let centre = if name == "extract.cond_b" { 1.0 } else { 0.0 };
        t.iter_mut().for_each(|v| *v = centre + rng.random_range(-a..a));
    }
    Ok(params)
}

/// Bound used by [`init_params`] for a tensor, with its centre.
pub fn init_bounds(name: &str, config: &ModelConfig) -> (f64, f64) {
    let a = 1.0 / (fan_in(name, config) as f64).sqrt();
    let centre = if name == "extract.cond_b" { 1.0 } else { 0.0 };
    (centre, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, 1).unwrap();
        assert_eq!(a, init_params(&cfg, 1).unwrap());
        assert_ne!(a, init_params(&cfg, 2).unwrap());
        assert!(a.all_finite());
        for (name, t) in a.tensors() {
            let (c, b) = init_bounds(&name, &cfg);
            assert!(t.iter().all(|v| (v - c).abs() <= b), "{name}");
        }
    }

    #[test]
    fn flat_round_trip() {
        let cfg = ModelConfig {
            encoder_channels: 4,
            embedding_dim: 3,
            n_train_speakers: 2,
            ..Default::default()
        };
        let a = init_params(&cfg, 3).unwrap();
        let flat = a.to_flat();
        assert_eq!(flat.len(), a.n_params());
        let mut b = a.zeros_like();
        b.set_flat(&flat).unwrap();
        assert_eq!(a, b);
        *b.flat_get_mut(5).unwrap() += 1.0;
        assert_eq!(b.to_flat()[5], flat[5] + 1.0);
        assert!(b.flat_get_mut(flat.len()).is_none());
        assert!(b.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        for bad in [
            ModelConfig { embedding_dim: 1, ..Default::default() },
            ModelConfig { n_repeats: 0, ..Default::default() },
            ModelConfig { kernel_size: 4, ..Default::default() },
            ModelConfig { hop: 41, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
