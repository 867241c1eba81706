//! Unit-level nonparametric bootstrap of the TCF triple for any estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{CutPair, Dataset};
use crate::error::{Error, Result};
use crate::estimator::EstimatorSpec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub covariance: [[f64; 3]; 3],
    /// In replicate order; `None` marks a discarded replicate.
    pub replicates: Vec<Option<[f64; 3]>>,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
}

impl BootstrapResult {
    pub fn sd(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| self.covariance[k][k].sqrt())
    }
}

/// Resampling indices of replicate `r`: stream `r` of the master seed.
pub(crate) fn resample_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// `1/(m-1) * sum (x - mean)(x - mean)^T` over the rows.
pub fn sample_covariance3(rows: &[[f64; 3]]) -> Result<[[f64; 3]; 3]> {
    let m = rows.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "a covariance needs at least 2 rows, got {m}"
        )));
    }
    let mut mean = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            mean[k] += r[k];
        }
    }
    mean = mean.map(|s| s / m as f64);
    let mut cov = [[0.0; 3]; 3];
    for r in rows {
        let d = [0, 1, 2].map(|k| r[k] - mean[k]);
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            cov[i][j] /= (m - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(cov)
}

/// Failed replicates are discarded and counted; more than half failing is an error.
/// The estimator tuning (K, formulas) is held fixed across replicates.
pub fn bootstrap_covariance(
    dataset: &Dataset,
    estimator: &EstimatorSpec,
    cut: CutPair,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_cuts(dataset, estimator, &[cut], b, seed)?
        .pop()
        .expect("one cut in, one result out")
}

/// One bootstrap per cut pair, sharing the resamples and the per-replicate fits.
pub fn bootstrap_cuts(
    dataset: &Dataset,
    estimator: &EstimatorSpec,
    cuts: &[CutPair],
    b: usize,
    seed: u64,
) -> Result<Vec<Result<BootstrapResult>>> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 bootstrap replicates, got {b}")));
    }
    let n = dataset.n();
    // replicate-major: draws[r][c]
    let draws: Vec<Vec<Option<[f64; 3]>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let sample = dataset.resample(&resample_indices(n, seed, r));
            match estimator.weights(&sample) {
                Ok(w) => cuts.iter().map(|&c| w.tcf(c).ok().map(|e| e.tcf)).collect(),
                Err(_) => vec![None; cuts.len()],
            }
        })
        .collect();
    Ok((0..cuts.len())
        .map(|c| {
            let replicates: Vec<Option<[f64; 3]>> = draws.iter().map(|row| row[c]).collect();
            let kept: Vec<[f64; 3]> = replicates.iter().flatten().copied().collect();
            let failures = b - kept.len();
            if 2 * failures > b {
                return Err(Error::TooManyFailures { failures, total: b });
            }
            Ok(BootstrapResult {
                covariance: sample_covariance3(&kept)?,
                replicates,
                b,
                seed,
                failures,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::knn::tests::mixed_dataset;
    use crate::neighbors::Metric;

    fn cut(a: f64, b: f64) -> CutPair {
        CutPair::new(a, b).unwrap()
    }

    #[test]
    fn class_constant_test_values_give_zero_covariance() {
        // every class sits at one test value, so each TCF is 1 in every replicate
        let units = (0..30)
            .map(|i| {
                let d = (i % 3) as u8 + 1;
                Unit::new(5.0 * f64::from(d - 1), vec![0.0], Some(d))
            })
            .collect();
        let ds = Dataset::new(units).unwrap();
        let r = bootstrap_covariance(&ds, &EstimatorSpec::Complete, cut(2.0, 8.0), 50, 9).unwrap();
        assert_eq!(r.covariance, [[0.0; 3]; 3]);
        assert!(r.replicates.iter().flatten().all(|x| *x == [1.0; 3]));
    }

    #[test]
    fn two_rows_center_at_their_mean() {
        let c = sample_covariance3(&[[0.2, 0.4, 0.6], [0.4, 0.1, 0.6]]).unwrap();
        let d = [-0.2, 0.3, 0.0];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - d[i] * d[j] / 2.0).abs() < 1e-15);
            }
        }
        let same = sample_covariance3(&[[0.3; 3], [0.3; 3]]).unwrap();
        assert_eq!(same, [[0.0; 3]; 3]);
        assert!(sample_covariance3(&[[0.3; 3]]).is_err());
    }

    #[test]
    fn deterministic_and_symmetric() {
        let ds = mixed_dataset(60, 0.7, 5);
        let spec = EstimatorSpec::knn(1, Metric::euclidean());
        let a = bootstrap_covariance(&ds, &spec, cut(3.0, 5.0), 40, 77).unwrap();
        let b = bootstrap_covariance(&ds, &spec, cut(3.0, 5.0), 40, 77).unwrap();
        assert_eq!(a, b);
        for i in 0..3 {
            assert!(a.covariance[i][i] >= 0.0);
            for j in 0..3 {
                assert_eq!(a.covariance[i][j], a.covariance[j][i]);
            }
        }
        let c = bootstrap_covariance(&ds, &spec, cut(3.0, 5.0), 40, 78).unwrap();
        assert_ne!(a.replicates, c.replicates);

        let cuts = [cut(3.0, 5.0), cut(2.0, 6.0)];
        let many = bootstrap_cuts(&ds, &spec, &cuts, 40, 77).unwrap();
        assert_eq!(many[0].as_ref().unwrap(), &a);
        let single = bootstrap_covariance(&ds, &spec, cuts[1], 40, 77).unwrap();
        assert_eq!(many[1].as_ref().unwrap(), &single);
    }

    #[test]
    fn streams_differ_per_replicate() {
        assert_ne!(resample_indices(20, 1, 0), resample_indices(20, 1, 1));
        assert_eq!(resample_indices(20, 1, 3), resample_indices(20, 1, 3));
    }

    #[test]
    fn mostly_failing_replicates_are_an_error() {
        // classes 2 and 3 appear once each; both survive a resample with probability ~0.4
        let mut units: Vec<Unit> = (0..40).map(|i| Unit::new(i as f64, vec![0.0], Some(1))).collect();
        units.push(Unit::new(20.0, vec![0.0], Some(2)));
        units.push(Unit::new(50.0, vec![0.0], Some(3)));
        let ds = Dataset::new(units).unwrap();
        let err = bootstrap_covariance(&ds, &EstimatorSpec::Complete, cut(10.0, 30.0), 40, 1).unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { .. }));
        assert!(bootstrap_covariance(&ds, &EstimatorSpec::Complete, cut(10.0, 30.0), 1, 1).is_err());
    }
}
