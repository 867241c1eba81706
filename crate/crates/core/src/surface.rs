//! ROC-surface evaluation over a grid of cut pairs.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{CutPair, Dataset, EstimatorTag};
use crate::error::{Error, Result};
use crate::estimator::EstimatorSpec;

#[derive(Clone, Debug, PartialEq)]
pub enum GridSpec {
    /// Cut candidates at the `m` empirical quantiles `i/(m+1)` of the test values.
    Quantile(usize),
    Explicit(Vec<CutPair>),
}

impl FromStr for GridSpec {
    type Err = Error;

    /// `quantile:m`; explicit cut files are read by the caller.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("quantile", m)) => {
                let m: usize = m
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad quantile count `{m}`")))?;
                if m < 2 {
                    return Err(Error::InvalidInput("a quantile grid needs m >= 2".into()));
                }
                Ok(GridSpec::Quantile(m))
            }
            _ => Err(Error::InvalidInput(format!("unknown grid `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub cut: CutPair,
    pub tcf: [f64; 3],
    pub estimator: EstimatorTag,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceGrid {
    /// Valid pairs in grid order, including any that could not be evaluated.
    pub cut_pairs: Vec<CutPair>,
    pub points: Vec<SurfacePoint>,
    /// TCF1 never decreases with c1 and TCF3 never increases with c2 across the points.
    pub monotone_envelope: bool,
    /// Candidate cut values dropped because they coincided with an earlier one.
    pub duplicates: usize,
    pub notes: Vec<String>,
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distinct quantile candidates and the number of duplicates dropped.
pub fn quantile_cuts(t: &[f64], m: usize) -> Result<(Vec<f64>, usize)> {
    if t.is_empty() {
        return Err(Error::InsufficientData("no test values".into()));
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = Vec::with_capacity(m);
    let mut duplicates = 0;
    for i in 1..=m {
        let q = quantile_sorted(&sorted, i as f64 / (m + 1) as f64);
        if cuts.last() == Some(&q) {
            duplicates += 1;
        } else {
            cuts.push(q);
        }
    }
    Ok((cuts, duplicates))
}

/// All pairs `(c_i, c_j)`, `i < j`, of ascending distinct candidates.
pub fn all_pairs(cuts: &[f64]) -> Vec<CutPair> {
    let mut out = Vec::new();
    for i in 0..cuts.len() {
        for j in i + 1..cuts.len() {
            if let Ok(p) = CutPair::new(cuts[i], cuts[j]) {
                out.push(p);
            }
        }
    }
    out
}

fn is_monotone(points: &[SurfacePoint]) -> bool {
    const SLACK: f64 = 1e-12;
    points.iter().all(|p| {
        points.iter().all(|q| {
            let tcf1_ok = !(p.cut.c1() < q.cut.c1()) || p.tcf[0] <= q.tcf[0] + SLACK;
            let tcf3_ok = !(p.cut.c2() < q.cut.c2()) || p.tcf[2] + SLACK >= q.tcf[2];
            tcf1_ok && tcf3_ok
        })
    })
}

/// Fits the estimator once, then evaluates every pair concurrently.
/// Pairs whose evaluation fails (an empty class, say) are skipped with a note.
pub fn roc_surface(dataset: &Dataset, estimator: &EstimatorSpec, grid: &GridSpec) -> Result<SurfaceGrid> {
    let (cut_pairs, duplicates) = match grid {
        GridSpec::Quantile(m) => {
            let (cuts, dup) = quantile_cuts(&dataset.t_values(), *m)?;
            (all_pairs(&cuts), dup)
        }
        GridSpec::Explicit(pairs) => (pairs.clone(), 0),
    };
    if cut_pairs.is_empty() {
        return Err(Error::InvalidInput("the grid has no valid cut pair".into()));
    }
    let weights = estimator.weights(dataset)?;
    let results: Vec<Result<[f64; 3]>> = cut_pairs
        .par_iter()
        .map(|&c| weights.tcf(c).map(|e| e.tcf))
        .collect();
    let mut points = Vec::with_capacity(cut_pairs.len());
    let mut notes = Vec::new();
    for (&cut, r) in cut_pairs.iter().zip(results) {
        match r {
            Ok(tcf) => points.push(SurfacePoint {
                cut,
                tcf,
                estimator: estimator.tag(),
            }),
            Err(e) => notes.push(format!("skipped {cut}: {e}")),
        }
    }
    if duplicates > 0 {
        notes.push(format!("{duplicates} tied quantile candidates removed"));
    }
    Ok(SurfaceGrid {
        monotone_envelope: is_monotone(&points),
        cut_pairs,
        points,
        duplicates,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::knn::complete_data_tcf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labelled(ts: &[f64], classes: &[u8]) -> Dataset {
        let units = ts
            .iter()
            .zip(classes)
            .map(|(&t, &d)| Unit::new(t, vec![0.0], Some(d)))
            .collect();
        Dataset::new(units).unwrap()
    }

    #[test]
    fn three_quantiles_of_one_to_nine_give_three_pairs() {
        let t: Vec<f64> = (1..=9).map(f64::from).collect();
        let (cuts, dup) = quantile_cuts(&t, 3).unwrap();
        assert_eq!(cuts, vec![3.0, 5.0, 7.0]);
        assert_eq!(dup, 0);
        let classes = [1, 1, 1, 2, 2, 2, 3, 3, 3];
        let ds = labelled(&t, &classes);
        let s = roc_surface(&ds, &EstimatorSpec::Complete, &GridSpec::Quantile(3)).unwrap();
        let pairs: Vec<(f64, f64)> = s.cut_pairs.iter().map(|c| (c.c1(), c.c2())).collect();
        assert_eq!(pairs, vec![(3.0, 5.0), (3.0, 7.0), (5.0, 7.0)]);
        assert_eq!(s.points.len(), 3);
        assert!(s.monotone_envelope);
    }

    #[test]
    fn ties_are_deduplicated_and_counted() {
        let t = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let (cuts, dup) = quantile_cuts(&t, 4).unwrap();
        assert_eq!(cuts.len() + dup, 4);
        assert!(dup >= 2);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn extreme_pair_saturates_to_middle_vertex() {
        let t: Vec<f64> = (0..12).map(f64::from).collect();
        let classes: Vec<u8> = (0..12).map(|i| (i % 3) as u8 + 1).collect();
        let ds = labelled(&t, &classes);
        let extreme = CutPair::new(-1.0, 12.0).unwrap();
        let s = roc_surface(&ds, &EstimatorSpec::Complete, &GridSpec::Explicit(vec![extreme])).unwrap();
        assert_eq!(s.points[0].tcf, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn surface_matches_pointwise_complete_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 10.0).collect();
        let classes: Vec<u8> = (0..80).map(|_| rng.random_range(1..=3)).collect();
        let ds = labelled(&t, &classes);
        let s = roc_surface(&ds, &EstimatorSpec::Complete, &GridSpec::Quantile(6)).unwrap();
        assert_eq!(s.points.len(), 15);
        for p in &s.points {
            assert_eq!(p.tcf, complete_data_tcf(&ds, p.cut).unwrap().tcf);
        }
    }

    #[test]
    fn uninformative_test_lies_near_the_chance_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 30_000;
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let classes: Vec<u8> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let ds = labelled(&t, &classes);
        let s = roc_surface(&ds, &EstimatorSpec::Complete, &GridSpec::Quantile(9)).unwrap();
        let mean_gap = s
            .points
            .iter()
            .map(|p| (p.tcf.iter().sum::<f64>() - 1.0).abs())
            .sum::<f64>()
            / s.points.len() as f64;
        // each TCF has sd below 0.005 at this size
        assert!(mean_gap < 0.02, "{mean_gap}");
    }

    #[test]
    fn unevaluable_pairs_are_noted() {
        // class 2 is never observed, so every pair fails
        let ds = labelled(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 3, 3]);
        let grid = GridSpec::Explicit(vec![CutPair::new(1.5, 3.5).unwrap()]);
        let s = roc_surface(&ds, &EstimatorSpec::Complete, &grid).unwrap();
        assert!(s.points.is_empty());
        assert_eq!(s.notes.len(), 1);
    }

    #[test]
    fn grid_spec_parsing() {
        assert_eq!("quantile:5".parse::<GridSpec>().unwrap(), GridSpec::Quantile(5));
        assert!("quantile:1".parse::<GridSpec>().is_err());
        assert!("file:x.csv".parse::<GridSpec>().is_err());
    }
}
