//! KNN imputation estimators of the class moments and the TCF triple, plus the
//! complete-data empirical TCFs they reduce to.

use serde::Serialize;

use crate::data::{CutPair, Dataset, EstimatorTag, TcfEstimate, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::neighbors::{imputation_weights, Metric};
use crate::weighted::UnitWeights;

/// Sample-mean moments: prevalence `theta_k`, `beta_jk = P(T >= c_j, class k)` and
/// `gamma_jk = P(T < c_j, class k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSet {
    pub theta: [f64; NUM_CLASSES],
    pub beta: [[f64; NUM_CLASSES]; 2],
    pub gamma: [[f64; NUM_CLASSES]; 2],
    pub k: usize,
    pub cut: CutPair,
}

impl MomentSet {
    pub fn from_weights(weights: &UnitWeights, k: usize, cut: CutPair) -> Self {
        let s = weights.sums(cut);
        let n = weights.n() as f64;
        MomentSet {
            theta: s.total.map(|x| x / n),
            beta: s.above.map(|row| row.map(|x| x / n)),
            gamma: s.below.map(|row| row.map(|x| x / n)),
            k,
            cut,
        }
    }
}

/// Weights `V*D + (1 - V)*rho_K` bound to the test values of `dataset`.
pub fn knn_weights(dataset: &Dataset, k: usize, metric: &Metric) -> Result<UnitWeights> {
    let w = imputation_weights(dataset, k, metric)?;
    Ok(UnitWeights::new(dataset.t_values(), w, EstimatorTag::Knn, Some(k)))
}

pub fn estimate_moments(dataset: &Dataset, k: usize, metric: &Metric, cut: CutPair) -> Result<MomentSet> {
    Ok(MomentSet::from_weights(&knn_weights(dataset, k, metric)?, k, cut))
}

pub fn estimate_tcf_knn(dataset: &Dataset, k: usize, metric: &Metric, cut: CutPair) -> Result<TcfEstimate> {
    knn_weights(dataset, k, metric)?.tcf(cut)
}

/// One-hot weights of a fully verified dataset.
pub fn complete_weights(dataset: &Dataset) -> Result<UnitWeights> {
    if !dataset.is_fully_verified() {
        return Err(Error::InvalidInput(
            "complete-data estimation requires every unit to be verified".into(),
        ));
    }
    let w = dataset.units().iter().map(|u| u.one_hot()).collect();
    Ok(UnitWeights::new(dataset.t_values(), w, EstimatorTag::Complete, None))
}

pub fn complete_data_tcf(dataset: &Dataset, cut: CutPair) -> Result<TcfEstimate> {
    complete_weights(dataset)?.tcf(cut)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::Unit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn mixed_dataset(n: usize, verify_rate: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units: Vec<Unit> = (0..n)
            .map(|_| {
                let d: u8 = rng.random_range(1..=3);
                let t = d as f64 * 1.5 + rng.random::<f64>() * 4.0;
                let a = vec![t * 0.3 + rng.random::<f64>()];
                let v = rng.random::<f64>() < verify_rate;
                Unit::new(t, a, v.then_some(d))
            })
            .collect();
        for (i, u) in units.iter_mut().take(3).enumerate() {
            u.d = Some(i as u8 + 1);
        }
        Dataset::new(units).unwrap()
    }

    fn cut(c1: f64, c2: f64) -> CutPair {
        CutPair::new(c1, c2).unwrap()
    }

    fn complete(ts: &[f64], ds: &[u8]) -> Dataset {
        Dataset::new(ts.iter().zip(ds).map(|(&t, &d)| Unit::new(t, vec![0.0], Some(d))).collect()).unwrap()
    }

    #[test]
    fn complete_data_examples() {
        let ds = complete(&[1.0, 3.0, 5.0], &[1, 2, 3]);
        assert_eq!(complete_data_tcf(&ds, cut(2.0, 4.0)).unwrap().tcf, [1.0, 1.0, 1.0]);
        let ds = complete(&[3.0, 3.0, 3.0], &[1, 2, 3]);
        assert_eq!(complete_data_tcf(&ds, cut(2.0, 4.0)).unwrap().tcf, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn complete_data_rejects_unverified_and_empty_class() {
        let ds = Dataset::new(vec![Unit::new(1.0, vec![0.0], Some(1)), Unit::new(2.0, vec![0.0], None)]).unwrap();
        assert!(complete_data_tcf(&ds, cut(0.0, 1.0)).is_err());
        let ds = complete(&[1.0, 2.0], &[1, 3]);
        assert!(matches!(complete_data_tcf(&ds, cut(0.0, 1.0)), Err(Error::EmptyClass { class: 2, .. })));
    }

    /// Independent tabulation of the three class fractions.
    fn tabulate(ds: &Dataset, c: CutPair) -> [f64; 3] {
        let mut hits = [0usize; 3];
        let mut sizes = [0usize; 3];
        for u in ds.units() {
            let k = u.class_index().unwrap();
            sizes[k] += 1;
            let region = if u.t < c.c1() { 0 } else if u.t < c.c2() { 1 } else { 2 };
            if region == k {
                hits[k] += 1;
            }
        }
        [0, 1, 2].map(|k| hits[k] as f64 / sizes[k] as f64)
    }

    #[test]
    fn complete_data_matches_tabulation() {
        for seed in 0..50 {
            let ds = mixed_dataset(120, 1.0, seed);
            for c in [cut(3.0, 4.5), cut(2.0, 6.0), cut(4.0, 4.1)] {
                let got = complete_data_tcf(&ds, c).unwrap().tcf;
                let want = tabulate(&ds, c);
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn all_verified_moments_are_sample_fractions() {
        let ds = mixed_dataset(90, 1.0, 4);
        let m = estimate_moments(&ds, 2, &Metric::euclidean(), cut(3.0, 5.0)).unwrap();
        let counts = ds.verified_counts();
        for k in 0..3 {
            assert_eq!(m.theta[k], counts[k] as f64 / 90.0);
        }
    }

    #[test]
    fn low_first_cut_saturates() {
        let ds = mixed_dataset(90, 0.6, 5);
        let m = estimate_moments(&ds, 1, &Metric::euclidean(), cut(-10.0, 5.0)).unwrap();
        assert_eq!(m.beta[0], m.theta);
        assert_eq!(m.gamma[0], [0.0; 3]);
    }

    #[test]
    fn knn_reduces_to_complete_data() {
        for seed in 0..20 {
            let ds = mixed_dataset(60, 1.0, seed);
            for k in [1, 3, 5] {
                let c = cut(3.5, 5.0);
                let a = estimate_tcf_knn(&ds, k, &Metric::euclidean(), c).unwrap();
                let b = complete_data_tcf(&ds, c).unwrap();
                assert_eq!(a.tcf, b.tcf);
            }
        }
    }

    /// Literal two-pass re-summation of the moment definitions.
    fn literal_moments(ds: &Dataset, k: usize, c: CutPair) -> ([f64; 3], [[f64; 3]; 2]) {
        let rho = crate::neighbors::impute_rho(ds, k, &Metric::euclidean()).unwrap();
        let n = ds.n() as f64;
        let mut theta = [0.0; 3];
        let mut beta = [[0.0; 3]; 2];
        for (i, u) in ds.units().iter().enumerate() {
            let v = if u.verified() { 1.0 } else { 0.0 };
            let d = u.one_hot();
            let r = rho.row(i);
            for kk in 0..3 {
                let w = v * d[kk] + (1.0 - v) * r[kk];
                theta[kk] += w / n;
                if u.t >= c.c1() {
                    beta[0][kk] += w / n;
                }
                if u.t >= c.c2() {
                    beta[1][kk] += w / n;
                }
            }
        }
        (theta, beta)
    }

    #[test]
    fn moments_match_literal_summation() {
        for seed in 0..10 {
            let ds = mixed_dataset(150, 0.6, seed);
            let c = cut(3.2, 5.1);
            let m = estimate_moments(&ds, 3, &Metric::euclidean(), c).unwrap();
            let (theta, beta) = literal_moments(&ds, 3, c);
            for kk in 0..3 {
                assert!((m.theta[kk] - theta[kk]).abs() < 1e-12);
                for j in 0..2 {
                    assert!((m.beta[j][kk] - beta[j][kk]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ratio_forms_agree() {
        for seed in 0..10 {
            let ds = mixed_dataset(100, 0.5, seed);
            let c = cut(3.0, 5.5);
            let w = knn_weights(&ds, 2, &Metric::euclidean()).unwrap();
            let s = w.sums(c);
            let est = w.tcf(c).unwrap().tcf;
            let ratio = [
                s.below[0][0] / s.total[0],
                (s.below[1][1] - s.below[0][1]) / s.total[1],
                s.above[1][2] / s.total[2],
            ];
            for k in 0..3 {
                assert!((est[k] - ratio[k]).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn knn_estimate_invariants(
            seed in 0u64..1_000_000,
            n in 12usize..80,
            rate in 0.3f64..1.0,
            k in 1usize..4,
            c1 in 1.0f64..7.0,
            width in 0.01f64..4.0,
            bump in 0.01f64..2.0,
        ) {
            let ds = mixed_dataset(n, rate, seed);
            prop_assume!(ds.n_verified() > k);
            let metric = Metric::euclidean();
            let c = cut(c1, c1 + width);
            let Ok(w) = knn_weights(&ds, k, &metric) else { return Ok(()) };
            let Ok(est) = w.tcf(c) else { return Ok(()) };
            for x in est.tcf {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert!(!est.out_of_range);

            let m = MomentSet::from_weights(&w, k, c);
            prop_assert!((m.theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..2 {
                for kk in 0..3 {
                    prop_assert!((m.gamma[j][kk] - (m.theta[kk] - m.beta[j][kk])).abs() < 1e-12);
                    prop_assert!(m.beta[j][kk] >= 0.0 && m.beta[j][kk] <= m.theta[kk]);
                }
            }
            for kk in 0..3 {
                prop_assert!(m.beta[1][kk] <= m.beta[0][kk]);
            }

            // monotone in each cut
            let wider = w.tcf(cut(c1, c1 + width + bump)).unwrap().tcf;
            prop_assert!(wider[2] <= est.tcf[2]);
            if c1 + bump < c1 + width {
                let shifted = w.tcf(cut(c1 + bump, c1 + width)).unwrap().tcf;
                prop_assert!(shifted[0] >= est.tcf[0]);
            }

            // degenerate limits
            let (lo, hi) = ds.units().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), u| (a.min(u.t), b.max(u.t)));
            prop_assert_eq!(w.tcf(cut(lo, hi + 1.0)).unwrap().tcf[0], 0.0);
            prop_assert_eq!(w.tcf(cut(lo - 1.0, hi + 1e-9)).unwrap().tcf[2], 0.0);
        }

        #[test]
        fn knn_estimate_is_permutation_invariant(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let units: Vec<Unit> = (0..40).map(|i| {
                let d = (i % 3) as u8 + 1;
                Unit::new(d as f64 + rng.random::<f64>() * 3.0, vec![rng.random::<f64>()], (i % 4 != 0).then_some(d))
            }).collect();
            let ds = Dataset::new(units.clone()).unwrap();
            let mut shuffled = units;
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let ps = Dataset::new(shuffled).unwrap();
            let c = cut(2.0, 3.2);
            let a = estimate_tcf_knn(&ds, 2, &Metric::euclidean(), c).unwrap().tcf;
            let b = estimate_tcf_knn(&ps, 2, &Metric::euclidean(), c).unwrap().tcf;
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }
}
