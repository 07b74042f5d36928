//! Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

fn same_shapes(a: &ModelParams, b: &ModelParams) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|((_, x), (_, y))| x.shape() == y.shape())
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !same_shapes(params, grads) || !same_shapes(params, &state.m) || !same_shapes(params, &state.v) {
        return Err(TseError::Shape("parameter, gradient and moment shapes differ".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            embedding_dim: 2,
            encoder_channels: 3,
            n_blocks_embed: 1,
            n_blocks_extract_per_repeat: 1,
            n_repeats: 1,
            frame_size: 4,
            hop: 2,
            n_train_speakers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = init_params(&cfg(), 0).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &before.zeros_like(), &mut st, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = init_params(&cfg(), 0).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        let n = g.n_params();
        let flat: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.3 + i as f64 } else { -2.0 }).collect();
        g.set_flat(&flat).unwrap();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 5e-4, &AdamConfig::default()).unwrap();
        for ((a, b), gi) in p.to_flat().iter().zip(before.to_flat()).zip(&flat) {
            let step = b - a;
            assert!((step - 5e-4 * gi.signum()).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let p0 = init_params(&cfg(), 1).unwrap();
        let g = init_params(&cfg(), 2).unwrap();
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &g, &mut st, 1e-2, &AdamConfig::default()).unwrap();
            adam_step(&mut p, &g, &mut st, 1e-2, &AdamConfig::default()).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());
        let other = init_params(&ModelConfig { encoder_channels: 4, ..cfg() }, 0).unwrap();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &other, &mut st, 1e-2, &AdamConfig::default()).is_err());
    }
}
