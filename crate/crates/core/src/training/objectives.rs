//! Loss functions over per-enrollment SDR losses and their gradients.

use std::f64::consts::LN_10;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::metrics::SdrNumerator;
use crate::model::ModelParams;
use crate::signal::Waveform;

/// Denominator floor of the training-time SDR.
pub const DEFAULT_SDR_EPS: f64 = 1e-8;

const DB: f64 = 10.0 / LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrLossOptions {
    pub numerator: SdrNumerator,
    pub eps: f64,
}

impl Default for SdrLossOptions {
    fn default() -> Self {
        Self {
            numerator: SdrNumerator::Reference,
            eps: DEFAULT_SDR_EPS,
        }
    }
}

/// `−SDR(reference, estimate)` without clipping, with its gradient with
/// respect to the estimate.
pub fn neg_sdr_with_grad(reference: &[f64], estimate: &[f64], opts: SdrLossOptions) -> Result<(f64, Vec<f64>)> {
    if reference.len() != estimate.len() {
        return Err(TseError::Length(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let err_energy: f64 = reference.iter().zip(estimate).map(|(s, e)| (s - e) * (s - e)).sum();
    let den = err_energy + opts.eps;
    let mut grad: Vec<f64> = reference
        .iter()
        .zip(estimate)
        .map(|(s, e)| -DB * 2.0 * (s - e) / den)
        .collect();
    let num = match opts.numerator {
        SdrNumerator::Reference => {
            let n: f64 = reference.iter().map(|s| s * s).sum();
            if n <= 0.0 {
                return Err(TseError::ZeroReference);
            }
            n
        }
        SdrNumerator::Estimate => {
            let n: f64 = estimate.iter().map(|e| e * e).sum::<f64>() + opts.eps;
            for (g, e) in grad.iter_mut().zip(estimate) {
                *g -= DB * 2.0 * e / n;
            }
            n
        }
    };
    Ok((-DB * (num / den).ln(), grad))
}

/// Softmax of `losses / tau`, computed with max subtraction.
pub fn softmax_weights(losses: &[f64], tau: f64) -> Vec<f64> {
    let m = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = losses.iter().map(|l| ((l - m) / tau).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / z).collect()
}

/// Maximum loss and the lowest index attaining it.
pub fn hard_worst(losses: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &l) in losses.iter().enumerate() {
        match best {
            Some((b, _)) if l <= b => {}
            _ => best = Some((l, i)),
        }
    }
    best.ok_or(TseError::EmptyEnrollmentSet)
}

/// Softmax-weighted loss `Σ wₙ Lₙ` and its derivative with respect to each
/// `Lₙ`, differentiating through the weights:
/// `∂/∂Lₙ = wₙ (1 + (Lₙ − L)/τ)`.
pub fn soft_worst(losses: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if losses.is_empty() {
        return Err(TseError::EmptyEnrollmentSet);
    }
    if !(tau > 0.0) {
        return Err(TseError::Config(format!("temperature must be positive, got {tau}")));
    }
    let w = softmax_weights(losses, tau);
    let total: f64 = w.iter().zip(losses).map(|(w, l)| w * l).sum();
    let d = w
        .iter()
        .zip(losses)
        .map(|(w, l)| w * (1.0 + (l - total) / tau))
        .collect();
    Ok((total, d))
}

/// `−ln softmax(logits)[label]` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(TseError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let p = Array1::from(softmax_weights(logits.as_slice().expect("contiguous"), 1.0));
    let loss = -p[label].ln();
    let mut d = p;
    d[label] -= 1.0;
    Ok((loss, d))
}

/// Which training loss to evaluate on one mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `L_sdr` on a single enrollment.
    Sdr,
    /// `max` of `L_sdr` over the given enrollments.
    WorstHard,
    /// Softmax-weighted `L_sdr` over the given enrollments.
    WorstSoft { tau: f64 },
    /// `L_sdr + α·CE` on a single enrollment.
    Multitask { alpha: f64 },
    /// Hard worst loss plus `α·CE` on the worst enrollment's embedding.
    Combined { alpha: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Sdr => "sdr",
            Objective::WorstHard => "worst_hard",
            Objective::WorstSoft { .. } => "worst_soft",
            Objective::Multitask { .. } => "multitask",
            Objective::Combined { .. } => "combined",
        }
    }

    fn single(&self) -> bool {
        matches!(self, Objective::Sdr | Objective::Multitask { .. })
    }

    /// The same objective without its speaker-identification term.
    pub fn without_si(self) -> Self {
        match self {
            Objective::Multitask { .. } => Objective::Sdr,
            Objective::Combined { .. } => Objective::WorstHard,
            o => o,
        }
    }
}

/// One training example: the reference, the mixture and the enrollments
/// the objective looks at.
pub struct LossInput<'a> {
    pub target: &'a Waveform,
    pub mixture: &'a Waveform,
    pub enrollments: Vec<&'a Waveform>,
    /// Speaker class for the SI term.
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// `L_sdr` per enrollment, in input order.
    pub per_enrollment: Vec<f64>,
    /// Cross-entropy term before weighting, when present.
    pub cross_entropy: Option<f64>,
    /// Enrollment whose embedding fed the SI term, or the hard argmax.
    pub selected: Option<usize>,
}

/// Evaluate `objective` and, when `grads` is given, accumulate its gradient.
pub fn evaluate(
    params: &ModelParams,
    input: &LossInput<'_>,
    objective: Objective,
    opts: SdrLossOptions,
    grads: Option<&mut ModelParams>,
) -> Result<LossValue> {
    if input.enrollments.is_empty() {
        return Err(TseError::EmptyEnrollmentSet);
    }
    if objective.single() && input.enrollments.len() != 1 {
        return Err(TseError::Shape(format!(
            "{} objective takes one enrollment, got {}",
            objective.name(),
            input.enrollments.len()
        )));
    }
    let label = match objective {
        Objective::Multitask { .. } | Objective::Combined { .. } => {
            let l = input
                .label
                .ok_or_else(|| TseError::Config("speaker label required for the SI term".into()))?;
            let m = params.config.n_train_speakers;
            if l >= m {
                return Err(TseError::LabelOutOfRange { label: l, classes: m });
            }
            Some(l)
        }
        _ => None,
    };

    let tape = params.forward_tape(input.mixture, &input.enrollments)?;
    let mut per = Vec::with_capacity(input.enrollments.len());
    let mut out_grads = Vec::with_capacity(input.enrollments.len());
    for i in 0..input.enrollments.len() {
        let (l, g) = neg_sdr_with_grad(input.target.samples(), tape.output(i), opts)?;
        per.push(l);
        out_grads.push(g);
    }

    let (mut total, coeffs, selected) = match objective {
        Objective::Sdr | Objective::Multitask { .. } => (per[0], vec![1.0], Some(0)),
        Objective::WorstHard | Objective::Combined { .. } => {
            let (v, arg) = hard_worst(&per)?;
            let mut c = vec![0.0; per.len()];
            c[arg] = 1.0;
            (v, c, Some(arg))
        }
        Objective::WorstSoft { tau } => {
            let (v, c) = soft_worst(&per, tau)?;
            (v, c, None)
        }
    };

    let mut ce_value = None;
    let mut d_embeddings: Vec<Option<Array1<f64>>> = vec![None; per.len()];
    let mut d_logits_si = None;
    if let (Objective::Multitask { alpha } | Objective::Combined { alpha }, Some(label)) = (objective, label) {
        let sel = selected.expect("single and hard objectives select a branch");
        let e = tape.embedding(sel);
        let logits = params.si_logits(e)?;
        let (ce, d_logits) = cross_entropy(&logits, label)?;
        ce_value = Some(ce);
        total += alpha * ce;
        if alpha != 0.0 {
            let d_logits = d_logits * alpha;
            d_embeddings[sel] = Some(params.si_w.t().dot(&d_logits));
            d_logits_si = Some((d_logits, e.0.clone()));
        }
    }

    if let Some(grads) = grads {
        let d_outputs: Vec<Option<Vec<f64>>> = out_grads
            .into_iter()
            .zip(&coeffs)
            .map(|(g, &c)| (c != 0.0).then(|| g.into_iter().map(|v| v * c).collect()))
            .collect();
        params.backward_tape(&tape, &d_outputs, &d_embeddings, grads);
        if let Some((dl, e)) = d_logits_si {
            grads.si_w += &dl.view().insert_axis(ndarray::Axis(1)).dot(&e.view().insert_axis(ndarray::Axis(0)));
        }
    }

    Ok(LossValue {
        total,
        per_enrollment: per,
        cross_entropy: ce_value,
        selected,
    })
}

/// Loss value and full parameter gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    input: &LossInput<'_>,
    objective: Objective,
    opts: SdrLossOptions,
) -> Result<(LossValue, ModelParams)> {
    let mut grads = params.zeros_like();
    let v = evaluate(params, input, objective, opts, Some(&mut grads))?;
    Ok((v, grads))
}

fn value(params: &ModelParams, input: &LossInput<'_>, objective: Objective, opts: SdrLossOptions) -> Result<f64> {
    Ok(evaluate(params, input, objective, opts, None)?.total)
}

/// `L_sdr = −SDR(S, TSE(Y, C))`.
pub fn loss_sdr(params: &ModelParams, target: &Waveform, mixture: &Waveform, enrollment: &Waveform) -> Result<f64> {
    let input = LossInput {
        target,
        mixture,
        enrollments: vec![enrollment],
        label: None,
    };
    value(params, &input, Objective::Sdr, SdrLossOptions::default())
}

pub fn loss_worst_hard(params: &ModelParams, target: &Waveform, mixture: &Waveform, subset: &[&Waveform]) -> Result<f64> {
    let input = LossInput {
        target,
        mixture,
        enrollments: subset.to_vec(),
        label: None,
    };
    value(params, &input, Objective::WorstHard, SdrLossOptions::default())
}

pub fn loss_worst_soft(
    params: &ModelParams,
    target: &Waveform,
    mixture: &Waveform,
    subset: &[&Waveform],
    tau: f64,
) -> Result<f64> {
    let input = LossInput {
        target,
        mixture,
        enrollments: subset.to_vec(),
        label: None,
    };
    value(params, &input, Objective::WorstSoft { tau }, SdrLossOptions::default())
}

pub fn loss_multitask(
    params: &ModelParams,
    target: &Waveform,
    mixture: &Waveform,
    enrollment: &Waveform,
    label: usize,
    alpha: f64,
) -> Result<f64> {
    let input = LossInput {
        target,
        mixture,
        enrollments: vec![enrollment],
        label: Some(label),
    };
    value(params, &input, Objective::Multitask { alpha }, SdrLossOptions::default())
}

pub fn loss_combined(
    params: &ModelParams,
    target: &Waveform,
    mixture: &Waveform,
    subset: &[&Waveform],
    label: usize,
    alpha: f64,
) -> Result<f64> {
    let input = LossInput {
        target,
        mixture,
        enrollments: subset.to_vec(),
        label: Some(label),
    };
    value(params, &input, Objective::Combined { alpha }, SdrLossOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn soft_worst_examples() {
        let (v, _) = soft_worst(&[3.0; 4], 2.0).unwrap();
        assert_relative_eq!(v, 3.0, epsilon = 1e-12);
        let w = softmax_weights(&[0.0, 2.0], 2.0);
        assert_relative_eq!(w[0], 0.2689414213699951, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.7310585786300049, epsilon = 1e-12);
        let (v, _) = soft_worst(&[0.0, 2.0], 2.0).unwrap();
        assert_relative_eq!(v, 1.4621171572600098, epsilon = 1e-12);
        let losses = [-13.0, -15.0, -11.5];
        let (v, _) = soft_worst(&losses, 1e6).unwrap();
        assert!((v - losses.iter().sum::<f64>() / 3.0).abs() < 1e-4);
        assert!(soft_worst(&[], 1.0).is_err());
        assert!(soft_worst(&[1.0], 0.0).is_err());
    }

    #[test]
    fn hard_worst_examples() {
        assert_eq!(hard_worst(&[-13.0, -15.0]).unwrap(), (-13.0, 0));
        assert_eq!(hard_worst(&[-4.0]).unwrap(), (-4.0, 0));
        assert_eq!(hard_worst(&[1.0, 2.0, 2.0]).unwrap(), (2.0, 1));
        assert!(hard_worst(&[]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_range() {
        let (ce, d) = cross_entropy(&Array1::zeros(16), 3).unwrap();
        assert_relative_eq!(ce, 16f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(d.sum(), 0.0, epsilon = 1e-12);
        assert!(matches!(
            cross_entropy(&Array1::zeros(4), 4),
            Err(TseError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn neg_sdr_known_values() {
        let s = [1.0, -1.0, 1.0, -1.0];
        let (l, _) = neg_sdr_with_grad(&s, &s, SdrLossOptions::default()).unwrap();
        assert_relative_eq!(l, -10.0 * (4.0f64 / 1e-8).log10(), epsilon = 1e-9);
        // mixture with SDR exactly 1 dB
        let g = 10f64.powf(-0.05);
        let y: Vec<f64> = s.iter().map(|v| v * (1.0 + g)).collect();
        let (l, _) = neg_sdr_with_grad(&s, &y, SdrLossOptions { eps: 0.0, ..Default::default() }).unwrap();
        assert_relative_eq!(l, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn neg_sdr_gradient_matches_finite_differences() {
        let s = [0.3, -0.8, 0.5, 0.1, -0.2];
        let e = [0.1, -0.5, 0.9, 0.0, -0.4];
        for numerator in [SdrNumerator::Reference, SdrNumerator::Estimate] {
            let opts = SdrLossOptions { numerator, eps: 1e-8 };
            let (_, g) = neg_sdr_with_grad(&s, &e, opts).unwrap();
            for i in 0..e.len() {
                let h = 1e-6;
                let mut ep = e;
                ep[i] += h;
                let mut em = e;
                em[i] -= h;
                let fd = (neg_sdr_with_grad(&s, &ep, opts).unwrap().0 - neg_sdr_with_grad(&s, &em, opts).unwrap().0) / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn soft_worst_derivative_matches_finite_differences() {
        let l = [0.3, -1.2, 2.5, 0.9];
        let (_, d) = soft_worst(&l, 0.7).unwrap();
        for i in 0..l.len() {
            let h = 1e-6;
            let mut lp = l;
            lp[i] += h;
            let mut lm = l;
            lm[i] -= h;
            let fd = (soft_worst(&lp, 0.7).unwrap().0 - soft_worst(&lm, 0.7).unwrap().0) / (2.0 * h);
            assert_relative_eq!(d[i], fd, max_relative = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn soft_is_bracketed_and_weights_normalised(
            losses in prop::collection::vec(-30.0f64..10.0, 1..8),
            tau in 0.05f64..20.0,
        ) {
            let (v, _) = soft_worst(&losses, tau).unwrap();
            let (hard, _) = hard_worst(&losses).unwrap();
            let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min - 1e-9 <= v && v <= hard + 1e-9);
            let w = softmax_weights(&losses, tau);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        }

        #[test]
        fn soft_moves_toward_mean_with_temperature(
            losses in prop::collection::vec(-30.0f64..10.0, 2..8),
            t1 in 0.05f64..10.0,
            factor in 1.0f64..10.0,
        ) {
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let a = soft_worst(&losses, t1).unwrap().0;
            let b = soft_worst(&losses, t1 * factor).unwrap().0;
            prop_assert!((b - mean).abs() <= (a - mean).abs() + 1e-9);
        }
    }
}
