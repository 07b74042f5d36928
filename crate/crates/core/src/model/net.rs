//! Embedding network, conditioned extraction network and the SI head, with
//! exact reverse-mode gradients.
//!
//! Extraction is split into a *front* (encoder + first repeat of blocks),
//! which depends only on the mixture, and a *back* (speaker adaptation,
//! remaining repeats, mask, decoder), which depends on the embedding. A
//! [`Tape`] runs the front once and the back once per enrollment, so several
//! enrollments of the same mixture share the front computation and its
//! gradient.

use ndarray::{Array1, Array2, Axis};

use super::layers::{
    affine, affine_backward_params, blocks_backward, blocks_forward, frame_signal, overlap_add, sigmoid,
    ConvBlock, ConvBlockCache,
};
use super::params::ModelParams;
use crate::error::{Result, TseError};
use crate::signal::Waveform;

/// Speaker embedding `e`, a vector of `embedding_dim` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(pub Array1<f64>);

impl SpeakerEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }
}

pub struct EmbedPass {
    frames: Array2<f64>,
    caches: Vec<ConvBlockCache>,
    pooled: Array1<f64>,
    n_frames: usize,
    pub embedding: SpeakerEmbedding,
}

pub struct FrontPass {
    len: usize,
    /// Input RMS divided out before encoding (1 when disabled).
    scale: f64,
    sample_rate: u32,
    frames: Array2<f64>,
    encoded: Array2<f64>,
    caches: Vec<ConvBlockCache>,
    features: Array2<f64>,
}

pub struct BackPass {
    conditioning: Array1<f64>,
    caches: Vec<Vec<ConvBlockCache>>,
    mask_input: Array2<f64>,
    mask: Array2<f64>,
    masked: Array2<f64>,
    pub output: Vec<f64>,
}

pub struct Branch {
    pub embed: EmbedPass,
    pub back: BackPass,
}

/// Forward record of one mixture processed with several enrollments.
pub struct Tape {
    pub front: FrontPass,
    pub branches: Vec<Branch>,
}

impl Tape {
    pub fn output(&self, branch: usize) -> &[f64] {
        &self.branches[branch].back.output
    }

    pub fn embedding(&self, branch: usize) -> &SpeakerEmbedding {
        &self.branches[branch].embed.embedding
    }

    pub fn output_waveform(&self, branch: usize) -> Waveform {
        Waveform::new(self.output(branch).to_vec(), self.front.sample_rate).expect("finite network output")
    }
}

fn repeats_forward(blocks: &[ConvBlock], per_repeat: usize, x: Array2<f64>) -> (Array2<f64>, Vec<Vec<ConvBlockCache>>) {
    let mut h = x;
    let mut caches = Vec::new();
    for chunk in blocks.chunks(per_repeat) {
        let (out, c) = blocks_forward(chunk, h);
        caches.push(c);
        h = out;
    }
    (h, caches)
}

fn repeats_backward(
    blocks: &[ConvBlock],
    per_repeat: usize,
    caches: &[Vec<ConvBlockCache>],
    dout: Array2<f64>,
    grads: &mut [ConvBlock],
) -> Array2<f64> {
    let mut d = dout;
    let chunks: Vec<(&[ConvBlock], &mut [ConvBlock])> =
        blocks.chunks(per_repeat).zip(grads.chunks_mut(per_repeat)).collect();
    for ((b, g), c) in chunks.into_iter().zip(caches).rev() {
        d = blocks_backward(b, c, d, g);
    }
    d
}

impl ModelParams {
    fn check_len(&self, len: usize) -> Result<()> {
        let min = self.config.frame_size;
        if len < min {
            return Err(TseError::TooShort { len, min });
        }
        Ok(())
    }

    fn check_embedding(&self, e: &SpeakerEmbedding) -> Result<()> {
        if e.dim() != self.config.embedding_dim {
            return Err(TseError::Shape(format!(
                "embedding has {} entries, model expects {}",
                e.dim(),
                self.config.embedding_dim
            )));
        }
        Ok(())
    }

    pub fn embed_forward(&self, enrollment: &[f64]) -> Result<EmbedPass> {
        self.check_len(enrollment.len())?;
        let cfg = &self.config;
        let p = &self.embed;
        let scaled;
        let input = if cfg.normalize_enrollment {
            let rms = crate::signal::power(enrollment).sqrt();
            if rms > 0.0 {
                scaled = enrollment.iter().map(|v| v / rms).collect::<Vec<_>>();
                &scaled[..]
            } else {
                enrollment
            }
        } else {
            enrollment
        };
        let frames = frame_signal(input, cfg.frame_size, cfg.hop);
        let encoded = affine(&p.enc_w, p.enc_b.view(), &frames);
        let (h, caches) = blocks_forward(&p.blocks, encoded);
        let n_frames = h.ncols();
        let pooled = h.mean_axis(Axis(1)).expect("at least one frame");
        let embedding = p.proj_w.dot(&pooled) + &p.proj_b;
        Ok(EmbedPass {
            frames,
            caches,
            pooled,
            n_frames,
            embedding: SpeakerEmbedding(embedding),
        })
    }

    pub fn embed_backward(&self, pass: &EmbedPass, d_embedding: &Array1<f64>, grads: &mut ModelParams) {
        let p = &self.embed;
        let g = &mut grads.embed;
        g.proj_w += &d_embedding
            .view()
            .insert_axis(Axis(1))
            .dot(&pass.pooled.view().insert_axis(Axis(0)));
        g.proj_b += d_embedding;
        let d_pooled = p.proj_w.t().dot(d_embedding) / pass.n_frames as f64;
        let dh = Array2::from_shape_fn((d_pooled.len(), pass.n_frames), |(c, _)| d_pooled[c]);
        let de = blocks_backward(&p.blocks, &pass.caches, dh, &mut g.blocks);
        affine_backward_params(&de, &pass.frames, &mut g.enc_w, &mut g.enc_b);
    }

    pub fn front_forward(&self, mixture: &Waveform) -> Result<FrontPass> {
        self.check_len(mixture.len())?;
        let cfg = &self.config;
        let p = &self.extract;
        let rms = mixture.power().sqrt();
        let scale = if cfg.normalize_mixture && rms > 0.0 { rms } else { 1.0 };
        let mut frames = frame_signal(mixture.samples(), cfg.frame_size, cfg.hop);
        if scale != 1.0 {
            frames /= scale;
        }
        let encoded = affine(&p.enc_w, p.enc_b.view(), &frames);
        let per = cfg.n_blocks_extract_per_repeat;
        let (features, caches) = blocks_forward(&p.blocks[..per], encoded.clone());
        Ok(FrontPass {
            len: mixture.len(),
            scale,
            sample_rate: mixture.sample_rate(),
            frames,
            encoded,
            caches,
            features,
        })
    }

    /// Speaker adaptation vector `A·e + c`.
    pub fn conditioning(&self, e: &SpeakerEmbedding) -> Result<Array1<f64>> {
        self.check_embedding(e)?;
        Ok(self.extract.cond_w.dot(&e.0) + &self.extract.cond_b)
    }

    pub fn back_forward(&self, front: &FrontPass, conditioning: Array1<f64>) -> Result<BackPass> {
        let cfg = &self.config;
        let p = &self.extract;
        if conditioning.len() != cfg.encoder_channels {
            return Err(TseError::Shape(format!(
                "conditioning has {} entries, expected {}",
                conditioning.len(),
                cfg.encoder_channels
            )));
        }
        let per = cfg.n_blocks_extract_per_repeat;
        let adapted = &front.features * &conditioning.view().insert_axis(Axis(1));
        let (mask_input, caches) = repeats_forward(&p.blocks[per..], per, adapted);
        let mask = affine(&p.mask_w, p.mask_b.view(), &mask_input).mapv(sigmoid);
        let masked = &mask * &front.encoded;
        let mut out_frames = p.dec_w.dot(&masked);
        if front.scale != 1.0 {
            out_frames *= front.scale;
        }
        let output = overlap_add(&out_frames, cfg.hop, front.len);
        Ok(BackPass {
            conditioning,
            caches,
            mask_input,
            mask,
            masked,
            output,
        })
    }

    /// Backward through the back half. Returns the gradients with respect to
    /// the front features, the encoder output and the conditioning vector.
    fn back_backward(
        &self,
        front: &FrontPass,
        back: &BackPass,
        d_output: &[f64],
        grads: &mut ModelParams,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let cfg = &self.config;
        let p = &self.extract;
        let g = &mut grads.extract;
        let mut d_frames = frame_signal(d_output, cfg.frame_size, cfg.hop);
        if front.scale != 1.0 {
            d_frames *= front.scale;
        }
        g.dec_w += &d_frames.dot(&back.masked.t());
        let d_masked = p.dec_w.t().dot(&d_frames);
        let d_encoded = &d_masked * &back.mask;
        let d_logits = &d_masked * &front.encoded * &back.mask.mapv(|m| m * (1.0 - m));
        affine_backward_params(&d_logits, &back.mask_input, &mut g.mask_w, &mut g.mask_b);
        let d_mask_input = p.mask_w.t().dot(&d_logits);
        let per = cfg.n_blocks_extract_per_repeat;
        let d_adapted = repeats_backward(&p.blocks[per..], per, &back.caches, d_mask_input, &mut g.blocks[per..]);
        let d_cond = (&d_adapted * &front.features).sum_axis(Axis(1));
        let d_features = &d_adapted * &back.conditioning.view().insert_axis(Axis(1));
        (d_features, d_encoded, d_cond)
    }

    fn conditioning_backward(&self, e: &SpeakerEmbedding, d_cond: &Array1<f64>, grads: &mut ModelParams) -> Array1<f64> {
        let g = &mut grads.extract;
        g.cond_w += &d_cond.view().insert_axis(Axis(1)).dot(&e.0.view().insert_axis(Axis(0)));
        g.cond_b += d_cond;
        self.extract.cond_w.t().dot(d_cond)
    }

    fn front_backward(&self, front: &FrontPass, d_features: Array2<f64>, mut d_encoded: Array2<f64>, grads: &mut ModelParams) {
        let per = self.config.n_blocks_extract_per_repeat;
        let g = &mut grads.extract;
        d_encoded += &blocks_backward(&self.extract.blocks[..per], &front.caches, d_features, &mut g.blocks[..per]);
        affine_backward_params(&d_encoded, &front.frames, &mut g.enc_w, &mut g.enc_b);
    }

    /// Run one mixture against several enrollments, recording everything
    /// needed for [`backward_tape`](Self::backward_tape).
    pub fn forward_tape(&self, mixture: &Waveform, enrollments: &[&Waveform]) -> Result<Tape> {
        let front = self.front_forward(mixture)?;
        let mut branches = Vec::with_capacity(enrollments.len());
        for enr in enrollments {
            let embed = self.embed_forward(enr.samples())?;
            let back = self.back_forward(&front, self.conditioning(&embed.embedding)?)?;
            branches.push(Branch { embed, back });
        }
        Ok(Tape { front, branches })
    }

    /// Accumulate parameter gradients into `grads`, given the gradient of
    /// the loss with respect to each branch output and (optionally) each
    /// branch embedding. Branches with neither are skipped.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        d_outputs: &[Option<Vec<f64>>],
        d_embeddings: &[Option<Array1<f64>>],
        grads: &mut ModelParams,
    ) {
        let c = self.config.encoder_channels;
        let f = tape.front.features.ncols();
        let mut d_features = Array2::<f64>::zeros((c, f));
        let mut d_encoded = Array2::<f64>::zeros((c, f));
        let mut front_used = false;
        for (i, branch) in tape.branches.iter().enumerate() {
            let d_out = d_outputs.get(i).and_then(Option::as_ref);
            let d_emb = d_embeddings.get(i).and_then(Option::as_ref);
            let mut d_e = match d_out {
                Some(dy) => {
                    let (df, denc, dcond) = self.back_backward(&tape.front, &branch.back, dy, grads);
                    d_features += &df;
                    d_encoded += &denc;
                    front_used = true;
                    Some(self.conditioning_backward(&branch.embed.embedding, &dcond, grads))
                }
                None => None,
            };
            if let Some(extra) = d_emb {
                d_e = Some(match d_e {
                    Some(v) => v + extra,
                    None => extra.clone(),
                });
            }
            if let Some(de) = d_e {
                self.embed_backward(&branch.embed, &de, grads);
            }
        }
        if front_used {
            self.front_backward(&tape.front, d_features, d_encoded, grads);
        }
    }

    pub fn embed(&self, enrollment: &Waveform) -> Result<SpeakerEmbedding> {
        Ok(self.embed_forward(enrollment.samples())?.embedding)
    }

    pub fn extract(&self, mixture: &Waveform, e: &SpeakerEmbedding) -> Result<Waveform> {
        let cond = self.conditioning(e)?;
        self.extract_conditioned(mixture, cond)
    }

    /// Extraction with an explicit adaptation vector in place of `A·e + c`.
    pub fn extract_conditioned(&self, mixture: &Waveform, conditioning: Array1<f64>) -> Result<Waveform> {
        let front = self.front_forward(mixture)?;
        let back = self.back_forward(&front, conditioning)?;
        Waveform::new(back.output, mixture.sample_rate())
    }

    /// `TSE(Y, C) = Extract(Y, Embed(C))`.
    pub fn tse(&self, mixture: &Waveform, enrollment: &Waveform) -> Result<Waveform> {
        self.extract(mixture, &self.embed(enrollment)?)
    }

    /// Extract with each enrollment, sharing the mixture-only computation.
    pub fn tse_many(&self, mixture: &Waveform, enrollments: &[&Waveform]) -> Result<Vec<Waveform>> {
        let front = self.front_forward(mixture)?;
        enrollments
            .iter()
            .map(|enr| {
                let e = self.embed(enr)?;
                let back = self.back_forward(&front, self.conditioning(&e)?)?;
                Waveform::new(back.output, mixture.sample_rate())
            })
            .collect()
    }

    /// Speaker-identification logits `W·e`.
    pub fn si_logits(&self, e: &SpeakerEmbedding) -> Result<Array1<f64>> {
        self.check_embedding(e)?;
        Ok(self.si_w.dot(&e.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embedding_dim: 4,
            encoder_channels: 6,
            n_blocks_embed: 2,
            n_blocks_extract_per_repeat: 2,
            n_repeats: 2,
            kernel_size: 3,
            frame_size: 8,
            hop: 4,
            n_train_speakers: 3,
            normalize_enrollment: false,
            normalize_mixture: false,
        }
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000).unwrap()
    }

    #[test]
    fn output_length_matches_input() {
        let p = init_params(&ModelConfig::default(), 0).unwrap();
        let enr = noise(400, 1);
        for len in [160, 1000, 8000] {
            let y = noise(len, 2);
            assert_eq!(p.tse(&y, &enr).unwrap().len(), len);
        }
        let p = init_params(&tiny(), 0).unwrap();
        for len in [8, 9, 13, 50] {
            assert_eq!(p.tse(&noise(len, 3), &enr).unwrap().len(), len);
        }
    }

    #[test]
    fn too_short_and_shape_errors() {
        let p = init_params(&tiny(), 0).unwrap();
        assert!(matches!(p.embed(&noise(7, 1)), Err(TseError::TooShort { .. })));
        assert!(matches!(p.tse(&noise(7, 1), &noise(100, 2)), Err(TseError::TooShort { .. })));
        let bad = SpeakerEmbedding(Array1::zeros(5));
        assert!(matches!(p.extract(&noise(100, 1), &bad), Err(TseError::Shape(_))));
        assert!(matches!(p.si_logits(&bad), Err(TseError::Shape(_))));
    }

    #[test]
    fn deterministic_and_compositional() {
        let p = init_params(&tiny(), 5).unwrap();
        let y = noise(120, 1);
        let c = noise(90, 2);
        let e = p.embed(&c).unwrap();
        assert_eq!(e, p.embed(&c).unwrap());
        assert_eq!(e.dim(), 4);
        assert_eq!(p.tse(&y, &c).unwrap(), p.extract(&y, &e).unwrap());
        let many = p.tse_many(&y, &[&c, &noise(60, 3)]).unwrap();
        assert_eq!(many[0], p.tse(&y, &c).unwrap());
        assert_ne!(many[0], many[1]);
    }

    #[test]
    fn silence_embeds_to_zero_with_zero_biases() {
        let mut p = init_params(&tiny(), 2).unwrap();
        p.zero_biases();
        let e = p.embed(&Waveform::zeros(64, 8000).unwrap()).unwrap();
        assert!(e.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_conditioning_ignores_embedding() {
        let mut p = init_params(&tiny(), 3).unwrap();
        let y = noise(100, 1);
        let ones = Array1::ones(p.config.encoder_channels);
        let a = p.extract_conditioned(&y, ones.clone()).unwrap();
        p.extract.cond_w.fill(0.0);
        p.extract.cond_b.fill(1.0);
        let e1 = p.embed(&noise(50, 4)).unwrap();
        let e2 = p.embed(&noise(70, 5)).unwrap();
        assert_eq!(p.extract(&y, &e1).unwrap(), a);
        assert_eq!(p.extract(&y, &e2).unwrap(), a);
    }

    #[test]
    fn normalization_flag_gives_scale_invariance() {
        let cfg = ModelConfig {
            normalize_enrollment: true,
            ..tiny()
        };
        let p = init_params(&cfg, 1).unwrap();
        let c = noise(80, 9);
        let a = p.embed(&c).unwrap();
        let b = p.embed(&c.scaled(3.7)).unwrap();
        for (x, y) in a.0.iter().zip(b.0.iter()) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn si_logits_cases() {
        let mut cfg = tiny();
        cfg.n_train_speakers = cfg.embedding_dim;
        let mut p = init_params(&cfg, 0).unwrap();
        let e = SpeakerEmbedding(Array1::from(vec![0.5, -1.0, 2.0, 0.25]));
        p.si_w = Array2::eye(4);
        assert_eq!(p.si_logits(&e).unwrap(), e.0);
        p.si_w.fill(0.0);
        assert!(p.si_logits(&e).unwrap().iter().all(|&v| v == 0.0));

        let p = init_params(&tiny(), 7).unwrap();
        let z = p.si_logits(&e).unwrap();
        for m in 0..3 {
            let want: f64 = (0..4).map(|d| p.si_w[[m, d]] * e.0[d]).sum();
            assert!((z[m] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_are_finite() {
        let p = init_params(&ModelConfig::default(), 11).unwrap();
        let y = noise(800, 1).scaled(10.0);
        let out = p.tse(&y, &noise(800, 2)).unwrap();
        assert!(out.samples().iter().all(|v| v.is_finite()));
    }
}
