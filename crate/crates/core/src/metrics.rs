//! Scale-dependent SDR, improvement over the mixture, and the
//! worst-enrollment statistics computed over an enrollment matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::signal::{power, Waveform};

/// Evaluation-time SDR values are clipped to `[-SDR_CAP_DB, SDR_CAP_DB]`.
pub const SDR_CAP_DB: f64 = 60.0;

/// SDRi below this value counts as an extraction failure.
pub const DEFAULT_FAILURE_THRESHOLD_DB: f64 = 5.0;

/// Which power goes in the SDR numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdrNumerator {
    /// `‖S‖²`, the usual scale-dependent SDR.
    #[default]
    Reference,
    /// `‖Ŝ‖²`.
    Estimate,
}

/// Uncapped SDR in dB over raw sample slices. Returns ±inf at the singular points.
pub fn sdr_raw(reference: &[f64], estimate: &[f64], numerator: SdrNumerator) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(TseError::Length(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let p_ref = power(reference);
    if p_ref <= 0.0 {
        return Err(TseError::ZeroReference);
    }
    let num = match numerator {
        SdrNumerator::Reference => p_ref,
        SdrNumerator::Estimate => power(estimate),
    };
    let err = reference
        .iter()
        .zip(estimate)
        .map(|(s, e)| (s - e) * (s - e))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(10.0 * (num / err).log10())
}

/// SDR in dB, capped at ±60 dB.
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    sdr_with(reference, estimate, SdrNumerator::Reference)
}

pub fn sdr_with(reference: &Waveform, estimate: &Waveform, numerator: SdrNumerator) -> Result<f64> {
    let v = sdr_raw(reference.samples(), estimate.samples(), numerator)?;
    Ok(if v.is_nan() { 0.0 } else { v.clamp(-SDR_CAP_DB, SDR_CAP_DB) })
}

/// SDR of the estimate minus SDR of the unprocessed mixture.
pub fn sdri(reference: &Waveform, estimate: &Waveform, mixture: &Waveform) -> Result<f64> {
    sdri_with(reference, estimate, mixture, SdrNumerator::Reference)
}

pub fn sdri_with(
    reference: &Waveform,
    estimate: &Waveform,
    mixture: &Waveform,
    numerator: SdrNumerator,
) -> Result<f64> {
    Ok(sdr_with(reference, estimate, numerator)? - sdr_with(reference, mixture, numerator)?)
}

/// The `n`-th smallest value (1-based). `n = 1` is the worst enrollment.
pub fn nth_worst(values: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n > values.len() {
        return Err(TseError::Index {
            index: n,
            len: values.len(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[n - 1])
}

/// Fraction of values strictly below `threshold_db`.
pub fn failure_ratio(values: &[f64], threshold_db: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(TseError::EmptyInput("failure ratio of no values"));
    }
    let failures = values.iter().filter(|&&v| v < threshold_db).count();
    Ok(failures as f64 / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Percentile with linear interpolation between closest ranks
/// (rank `p/100 · (len − 1)` on the sorted values).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn percentile_summary(values: &[f64]) -> Result<Percentiles> {
    if values.is_empty() {
        return Err(TseError::EmptyInput("percentiles of no values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Percentiles {
        p5: percentile(&sorted, 5.0),
        p25: percentile(&sorted, 25.0),
        p50: percentile(&sorted, 50.0),
        p75: percentile(&sorted, 75.0),
        p95: percentile(&sorted, 95.0),
    })
}

/// Mixtures × enrollment candidates table of SDRi values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub mixture_ids: Vec<String>,
    pub enrollment_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Free-form `key: value` metadata carried in the text header.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

const MATRIX_MAGIC: &str = "# tse-eval-matrix v1";

impl EvalMatrix {
    pub fn new(mixture_ids: Vec<String>, enrollment_ids: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if mixture_ids.len() != values.len() {
            return Err(TseError::Shape(format!(
                "{} mixture ids for {} rows",
                mixture_ids.len(),
                values.len()
            )));
        }
        for (id, row) in mixture_ids.iter().zip(&values) {
            if row.len() != enrollment_ids.len() {
                return Err(TseError::Shape(format!(
                    "row {id} has {} entries, expected {}",
                    row.len(),
                    enrollment_ids.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(TseError::Shape(format!("row {id} has a non-finite entry")));
            }
        }
        Ok(Self {
            mixture_ids,
            enrollment_ids,
            values,
            meta: BTreeMap::new(),
        })
    }

    pub fn n_mixtures(&self) -> usize {
        self.values.len()
    }

    pub fn n_enrollments(&self) -> usize {
        self.enrollment_ids.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MATRIX_MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str("mixture_id");
        for e in &self.enrollment_ids {
            out.push('\t');
            out.push_str(e);
        }
        out.push('\n');
        for (id, row) in self.mixture_ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parse the text form. Errors carry the 1-based line number.
    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| TseError::Parse {
            location: format!("line {line}"),
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == MATRIX_MAGIC => {}
            _ => return Err(err(1, format!("expected header `{MATRIX_MAGIC}`"))),
        }
        let mut meta = BTreeMap::new();
        let mut header = None;
        for (no, line) in lines.by_ref() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once(':')
                    .ok_or_else(|| err(no, "metadata line lacks `key: value`".into()))?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                header = Some((no, line));
                break;
            }
        }
        let (hno, header) = header.ok_or_else(|| err(1, "missing column header".into()))?;
        let mut cols = header.split('\t');
        if cols.next() != Some("mixture_id") {
            return Err(err(hno, "column header must start with `mixture_id`".into()));
        }
        let enrollment_ids: Vec<String> = cols.map(str::to_string).collect();
        if enrollment_ids.is_empty() {
            return Err(err(hno, "no enrollment columns".into()));
        }
        let mut mixture_ids = Vec::new();
        let mut values = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let row = fields
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| err(no, format!("bad value `{f}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != enrollment_ids.len() {
                return Err(err(
                    no,
                    format!("expected {} values, found {}", enrollment_ids.len(), row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(err(no, "non-finite value".into()));
            }
            mixture_ids.push(id);
            values.push(row);
        }
        let mut m = Self::new(mixture_ids, enrollment_ids, values)?;
        m.meta = meta;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NthWorstStats {
    /// 1 = worst enrollment, N = best.
    pub n: usize,
    pub mean: f64,
    pub failure_ratio: f64,
    pub percentiles: Percentiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstEnrollmentReport {
    pub per_n: Vec<NthWorstStats>,
    /// Mean over every cell of the matrix.
    pub overall_mean: f64,
    /// Population standard deviation over every cell.
    pub overall_std: f64,
    /// Failure ratio over every cell.
    pub overall_failure_ratio: f64,
    pub threshold_db: f64,
}

impl WorstEnrollmentReport {
    pub fn worst(&self) -> &NthWorstStats {
        &self.per_n[0]
    }

    pub fn best(&self) -> &NthWorstStats {
        self.per_n.last().expect("report has at least one column")
    }

    /// `"15.1±3.8"`-style rendering of the overall mean.
    pub fn mean_pm_std(&self) -> String {
        format!("{:.1}±{:.1}", self.overall_mean, self.overall_std)
    }
}

pub fn worst_enrollment_report(matrix: &EvalMatrix, threshold_db: f64) -> Result<WorstEnrollmentReport> {
    if matrix.n_mixtures() == 0 {
        return Err(TseError::EmptyInput("evaluation matrix has no rows"));
    }
    let n_enr = matrix.n_enrollments();
    let sorted_rows: Vec<Vec<f64>> = matrix
        .values
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r
        })
        .collect();
    let mut per_n = Vec::with_capacity(n_enr);
    for n in 1..=n_enr {
        let column: Vec<f64> = sorted_rows.iter().map(|r| r[n - 1]).collect();
        per_n.push(NthWorstStats {
            n,
            mean: column.iter().sum::<f64>() / column.len() as f64,
            failure_ratio: failure_ratio(&column, threshold_db)?,
            percentiles: percentile_summary(&column)?,
        });
    }
    let all: Vec<f64> = matrix.cells().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
    Ok(WorstEnrollmentReport {
        per_n,
        overall_mean: mean,
        overall_std: var.sqrt(),
        overall_failure_ratio: failure_ratio(&all, threshold_db)?,
        threshold_db,
    })
}
