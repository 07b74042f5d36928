//! Enrollment sampling.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrollmentSampling {
    /// Fresh uniform draw every time an example is visited.
    #[default]
    Random,
    /// Cycle through the candidates deterministically with the epoch.
    RoundRobin,
}

/// Uniform index in `0..n`.
pub fn sample_uniform_enrollment<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<usize> {
    if n == 0 {
        return Err(TseError::EmptyEnrollmentSet);
    }
    Ok(rng.random_range(0..n))
}

/// `k` distinct indices from `0..n`, uniform over k-subsets, in ascending order.
pub fn sample_subset<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || k == 0 {
        return Err(TseError::EmptyEnrollmentSet);
    }
    if k > n {
        return Err(TseError::SubsetTooLarge { k, n });
    }
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Enrollment indices for one visit of an example.
pub fn choose_enrollments<R: Rng + ?Sized>(
    strategy: EnrollmentSampling,
    n: usize,
    k: usize,
    epoch: usize,
    example: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match strategy {
        EnrollmentSampling::Random if k == 1 => Ok(vec![sample_uniform_enrollment(n, rng)?]),
        EnrollmentSampling::Random => sample_subset(n, k, rng),
        EnrollmentSampling::RoundRobin => {
            if n == 0 || k == 0 {
                return Err(TseError::EmptyEnrollmentSet);
            }
            if k > n {
                return Err(TseError::SubsetTooLarge { k, n });
            }
            let start = (epoch * k + example) % n;
            let mut v: Vec<usize> = (0..k).map(|j| (start + j) % n).collect();
            v.sort_unstable();
            Ok(v)
        }
    }
}
