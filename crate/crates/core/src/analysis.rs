//! Evaluation over every enrollment candidate, embedding discriminability
//! and side-by-side system comparison.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Split};
use crate::error::{Result, TseError};
use crate::metrics::{sdri_with, worst_enrollment_report, EvalMatrix, SdrNumerator, WorstEnrollmentReport};
use crate::model::{ModelParams, SpeakerEmbedding};

/// SDRi of every (mixture, enrollment candidate) pair of a split. Column
/// `j` holds the `j`-th candidate of each mixture.
pub fn build_eval_matrix(
    params: &ModelParams,
    dataset: &Dataset,
    split: Split,
    numerator: SdrNumerator,
) -> Result<EvalMatrix> {
    let items = dataset.split(split);
    let n = items.iter().map(|i| i.enrollments.len()).min().unwrap_or(0);
    if items.iter().any(|i| i.enrollments.len() != n) {
        return Err(TseError::Shape("mixtures have differing enrollment counts".into()));
    }
    let mut values = Vec::with_capacity(items.len());
    for item in items {
        let enrollments: Vec<_> = item.enrollments.iter().map(|&u| &dataset.utterances[u]).collect();
        let cell_err = |j: usize, e: TseError| TseError::Cell {
            mixture: item.id.clone(),
            enrollment: dataset.utterance_ids[item.enrollments[j]].clone(),
            source: Box::new(e),
        };
        let front = params.front_forward(&item.mixture).map_err(|e| cell_err(0, e))?;
        let mut row = Vec::with_capacity(n);
        for (j, enr) in enrollments.iter().enumerate() {
            let est = (|| {
                let e = params.embed(enr)?;
                let back = params.back_forward(&front, params.conditioning(&e)?)?;
                crate::signal::Waveform::new(back.output, item.mixture.sample_rate())
            })()
            .map_err(|e| cell_err(j, e))?;
            row.push(sdri_with(&item.target, &est, &item.mixture, numerator).map_err(|e| cell_err(j, e))?);
        }
        values.push(row);
    }
    let mut m = EvalMatrix::new(
        items.iter().map(|i| i.id.clone()).collect(),
        (0..n).map(|j| format!("enr{j}")).collect(),
        values,
    )?;
    m.meta.insert("split".into(), split.name().into());
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSample {
    pub speaker_id: String,
    pub utterance_id: String,
    pub embedding: SpeakerEmbedding,
}

/// One embedding per distinct enrollment utterance used in `split`.
pub fn collect_embeddings(params: &ModelParams, dataset: &Dataset, split: Split) -> Result<Vec<EmbeddingSample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in dataset.split(split) {
        for &u in &item.enrollments {
            if seen.insert(u) {
                out.push(EmbeddingSample {
                    speaker_id: dataset.utterance_speakers[u].clone(),
                    utterance_id: dataset.utterance_ids[u].clone(),
                    embedding: params.embed(&dataset.utterances[u])?,
                });
            }
        }
    }
    Ok(out)
}

/// `trace(S_b) / trace(S_w)` with `S_b = Σ_c n_c (μ_c − μ)(μ_c − μ)ᵀ` and
/// `S_w = Σ_c Σ_{i∈c} (x_i − μ_c)(x_i − μ_c)ᵀ`.
pub fn variance_ratio(samples: &[EmbeddingSample]) -> Result<f64> {
    let mut classes: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for s in samples {
        classes.entry(&s.speaker_id).or_default().push(s.embedding.as_slice());
    }
    if classes.len() < 2 {
        return Err(TseError::InsufficientClasses {
            required: 2,
            got: classes.len(),
        });
    }
    let d = samples[0].embedding.dim();
    if samples.iter().any(|s| s.embedding.dim() != d) {
        return Err(TseError::Shape("embeddings differ in dimension".into()));
    }
    let mean_of = |xs: &[&[f64]]| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for x in xs {
            for (a, b) in m.iter_mut().zip(x.iter()) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= xs.len() as f64);
        m
    };
    let all: Vec<&[f64]> = samples.iter().map(|s| s.embedding.as_slice()).collect();
    let mu = mean_of(&all);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut between = 0.0;
    let mut within = 0.0;
    for xs in classes.values() {
        let mc = mean_of(xs);
        between += xs.len() as f64 * sq(&mc, &mu);
        within += xs.iter().map(|x| sq(x, &mc)).sum::<f64>();
    }
    // Rounding in the class means leaves ~1e-32 relative residue for
    // classes of identical points.
    if within <= 1e-20 * (between + within) || within == 0.0 {
        return Err(TseError::Degenerate);
    }
    Ok(between / within)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub name: String,
    pub report: WorstEnrollmentReport,
    pub variance_ratio: Option<f64>,
}

impl SystemReport {
    pub fn new(name: impl Into<String>, matrix: &EvalMatrix, threshold_db: f64, variance_ratio: Option<f64>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            report: worst_enrollment_report(matrix, threshold_db)?,
            variance_ratio,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub system: String,
    pub mean: f64,
    pub std: f64,
    pub worst: f64,
    pub second_worst: Option<f64>,
    pub best: f64,
    pub failure_mean: f64,
    pub failure_worst: f64,
    pub failure_best: f64,
    pub variance_ratio: Option<f64>,
}

/// Percentiles of the n-th-worst SDRi of one system, for box plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRecord {
    pub system: String,
    pub n: usize,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub plot: Vec<PlotRecord>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.digits$}"))
}

impl Comparison {
    pub fn table_tsv(&self) -> String {
        let mut s = String::from(
            "system\tmean_sdri\tstd_sdri\tworst_sdri\tsecond_worst_sdri\tbest_sdri\tfailure_mean\tfailure_worst\tfailure_best\tvariance_ratio\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
                r.system,
                r.mean,
                r.std,
                r.worst,
                opt(r.second_worst, 4),
                r.best,
                r.failure_mean,
                r.failure_worst,
                r.failure_best,
                opt(r.variance_ratio, 4)
            );
        }
        s
    }

    pub fn table_markdown(&self) -> String {
        let mut s = String::from(
            "| System | Mean SDRi | Worst | 2nd worst | Best | Fail (mean) | Fail (worst) | Fail (best) | Var. ratio |\n\
             |---|---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {:.1}±{:.1} | {:.1} | {} | {:.1} | {:.1}% | {:.1}% | {:.1}% | {} |",
                r.system,
                r.mean,
                r.std,
                r.worst,
                opt(r.second_worst, 1),
                r.best,
                100.0 * r.failure_mean,
                100.0 * r.failure_worst,
                100.0 * r.failure_best,
                opt(r.variance_ratio, 2)
            );
        }
        s
    }

    pub fn plot_tsv(&self) -> String {
        let mut s = String::from("system\tn\tp5\tp25\tp50\tp75\tp95\tmean\n");
        for p in &self.plot {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                p.system, p.n, p.p5, p.p25, p.p50, p.p75, p.p95, p.mean
            );
        }
        s
    }
}

pub fn compare_systems(reports: &[SystemReport]) -> Comparison {
    let mut rows = Vec::with_capacity(reports.len());
    let mut plot = Vec::new();
    for s in reports {
        let r = &s.report;
        rows.push(ComparisonRow {
            system: s.name.clone(),
            mean: r.overall_mean,
            std: r.overall_std,
            worst: r.worst().mean,
            second_worst: r.per_n.get(1).map(|x| x.mean),
            best: r.best().mean,
            failure_mean: r.overall_failure_ratio,
            failure_worst: r.worst().failure_ratio,
            failure_best: r.best().failure_ratio,
            variance_ratio: s.variance_ratio,
        });
        for st in &r.per_n {
            let p = &st.percentiles;
            plot.push(PlotRecord {
                system: s.name.clone(),
                n: st.n,
                p5: p.p5,
                p25: p.p25,
                p50: p.p50,
                p75: p.p75,
                p95: p.p95,
                mean: st.mean,
            });
        }
    }
    Comparison { rows, plot }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DatasetSpec};
    use crate::metrics::{failure_ratio, nth_worst, percentile_summary};
    use crate::model::{init_params, ModelConfig};
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(spk: &str, v: Vec<f64>) -> EmbeddingSample {
        EmbeddingSample {
            speaker_id: spk.into(),
            utterance_id: String::new(),
            embedding: SpeakerEmbedding(Array1::from(v)),
        }
    }

    fn brute_force(samples: &[EmbeddingSample]) -> f64 {
        let d = samples[0].embedding.dim();
        let ids: Vec<&str> = {
            let mut v: Vec<&str> = samples.iter().map(|s| s.speaker_id.as_str()).collect();
            v.sort();
            v.dedup();
            v
        };
        let mut mu = vec![0.0; d];
        for s in samples {
            for k in 0..d {
                mu[k] += s.embedding.0[k] / samples.len() as f64;
            }
        }
        let (mut sb, mut sw) = (0.0, 0.0);
        for id in ids {
            let members: Vec<&EmbeddingSample> = samples.iter().filter(|s| s.speaker_id == id).collect();
            for k in 0..d {
                let mc: f64 = members.iter().map(|s| s.embedding.0[k]).sum::<f64>() / members.len() as f64;
                sb += members.len() as f64 * (mc - mu[k]).powi(2);
                for s in &members {
                    sw += (s.embedding.0[k] - mc).powi(2);
                }
            }
        }
        sb / sw
    }

    fn random_samples(seed: u64, classes: usize, per: usize, d: usize) -> Vec<EmbeddingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..classes)
            .flat_map(|c| (0..per).map(move |_| c))
            .map(|c| sample(&format!("s{c}"), (0..d).map(|_| rng.random_range(-1.0..1.0) + c as f64).collect()))
            .collect()
    }

    #[test]
    fn variance_ratio_cases() {
        let s = vec![
            sample("a", vec![1.0, 0.0]),
            sample("a", vec![-1.0, 0.0]),
            sample("b", vec![0.0, 1.0]),
            sample("b", vec![0.0, -1.0]),
        ];
        assert_eq!(variance_ratio(&s).unwrap(), 0.0);
        let s = vec![
            sample("a", vec![0.3, 0.1]),
            sample("a", vec![0.3, 0.1]),
            sample("b", vec![2.0, 1.0]),
            sample("b", vec![2.0, 1.0]),
        ];
        assert!(matches!(variance_ratio(&s), Err(TseError::Degenerate)));
        let s = vec![sample("a", vec![0.0]), sample("a", vec![1.0])];
        assert!(matches!(variance_ratio(&s), Err(TseError::InsufficientClasses { .. })));
        let s = random_samples(1, 3, 5, 4);
        assert!((variance_ratio(&s).unwrap() - brute_force(&s)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn variance_ratio_invariances(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU, shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
            let s = random_samples(seed, 3, 4, 2);
            let base = variance_ratio(&s).unwrap();
            let (c, sn) = (angle.cos(), angle.sin());
            let moved: Vec<_> = s
                .iter()
                .map(|x| {
                    let v = &x.embedding.0;
                    sample(&x.speaker_id, vec![scale * (c * v[0] - sn * v[1]) + shift, scale * (sn * v[0] + c * v[1]) - shift])
                })
                .collect();
            prop_assert!((variance_ratio(&moved).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        }
    }

    fn tiny() -> (ModelParams, Dataset) {
        let spec = DatasetSpec {
            n_train_speakers: 2,
            n_dev_speakers: 2,
            n_eval_speakers: 2,
            n_train_mixtures: 2,
            n_dev_mixtures: 2,
            n_eval_mixtures: 3,
            n_enrollments: 2,
            utterances_per_speaker: 12,
            utterance_duration_range_s: [0.2, 0.3],
            min_enrollment_duration_s: 0.2,
            ..Default::default()
        };
        let ds = Dataset::from_corpus(&generate(&spec).unwrap());
        let cfg = ModelConfig {
            embedding_dim: 4,
            encoder_channels: 8,
            n_blocks_embed: 1,
            n_blocks_extract_per_repeat: 1,
            n_train_speakers: 2,
            ..Default::default()
        };
        (init_params(&cfg, 0).unwrap(), ds)
    }

    #[test]
    fn eval_matrix_shape_determinism_round_trip() {
        let (p, mut ds) = tiny();
        let m = build_eval_matrix(&p, &ds, Split::Eval, SdrNumerator::Reference).unwrap();
        assert_eq!((m.n_mixtures(), m.n_enrollments()), (3, 2));
        assert_eq!(m, build_eval_matrix(&p, &ds, Split::Eval, SdrNumerator::Reference).unwrap());
        assert_eq!(EvalMatrix::from_text(&m.to_text()).unwrap(), m);
        ds.eval.truncate(1);
        let m1 = build_eval_matrix(&p, &ds, Split::Eval, SdrNumerator::Reference).unwrap();
        assert_eq!((m1.n_mixtures(), m1.n_enrollments()), (1, 2));
        assert_eq!(m1.values[0], m.values[0]);
    }

    #[test]
    fn embeddings_are_deduplicated_and_degenerate_on_silence() {
        let (mut p, mut ds) = tiny();
        let e = collect_embeddings(&p, &ds, Split::Dev).unwrap();
        let distinct: HashSet<usize> = ds.dev.iter().flat_map(|i| i.enrollments.clone()).collect();
        assert_eq!(e.len(), distinct.len());
        assert_eq!(e, collect_embeddings(&p, &ds, Split::Dev).unwrap());
        p.zero_biases();
        for u in &mut ds.utterances {
            *u = crate::signal::Waveform::zeros(u.len(), u.sample_rate()).unwrap();
        }
        let e = collect_embeddings(&p, &ds, Split::Dev).unwrap();
        assert!(e.iter().all(|s| s.embedding.0.iter().all(|&v| v == 0.0)));
        assert!(matches!(variance_ratio(&e), Err(TseError::Degenerate)));
    }

    #[test]
    fn comparison_matches_metric_functions() {
        let values = vec![vec![10.0, 2.0, 7.0], vec![4.0, 12.0, 6.0], vec![-1.0, 3.0, 9.0], vec![8.0, 8.0, 1.0]];
        let m = EvalMatrix::new(
            (0..4).map(|i| format!("m{i}")).collect(),
            (0..3).map(|j| format!("enr{j}")).collect(),
            values.clone(),
        )
        .unwrap();
        let rep = SystemReport::new("sys", &m, 5.0, Some(1.5)).unwrap();
        let c = compare_systems(std::slice::from_ref(&rep));
        assert_eq!(c.rows.len(), 1);
        let r = &c.rows[0];
        let worst: Vec<f64> = values.iter().map(|v| nth_worst(v, 1).unwrap()).collect();
        assert_eq!(worst, vec![2.0, 4.0, -1.0, 1.0]);
        assert_eq!(r.worst, 1.5);
        assert_eq!(r.second_worst, Some((7.0 + 6.0 + 3.0 + 8.0) / 4.0));
        assert_eq!(r.best, (10.0 + 12.0 + 9.0 + 8.0) / 4.0);
        assert_eq!(r.mean, 69.0 / 12.0);
        assert_eq!(r.failure_worst, failure_ratio(&worst, 5.0).unwrap());
        assert_eq!(r.failure_worst, 1.0);
        assert_eq!(r.failure_mean, 5.0 / 12.0);
        assert_eq!(r.variance_ratio, Some(1.5));
        let p = &c.plot[0];
        let ps = percentile_summary(&worst).unwrap();
        assert_eq!((p.n, p.p5, p.p50, p.p95), (1, ps.p5, ps.p50, ps.p95));
        assert_eq!(c.plot.len(), 3);

        let two = compare_systems(&[rep.clone(), rep]);
        assert_eq!(two.rows[0], two.rows[1]);
        assert_eq!(two.table_tsv().lines().count(), 3);
        assert!(two.table_markdown().contains("| sys |"));
        assert_eq!(two.plot_tsv().lines().count(), 7);
    }
}
