//! Distance metrics, exact nearest-neighbor search, KNN label imputation, adaptive
//! propensities, and cross-validated choice of the neighborhood size.
//!
//! Neighbor lists never contain the query unit. Distance ties are broken by the
//! smaller original index, so every ordering here is total and deterministic.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Manhattan,
    Canberra,
    Mahalanobis,
}

impl FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(MetricKind::Euclidean),
            "manhattan" => Ok(MetricKind::Manhattan),
            "canberra" => Ok(MetricKind::Canberra),
            "mahalanobis" => Ok(MetricKind::Mahalanobis),
            other => Err(Error::InvalidInput(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::Manhattan => "manhattan",
            MetricKind::Canberra => "canberra",
            MetricKind::Mahalanobis => "mahalanobis",
        };
        f.write_str(s)
    }
}

/// A distance on the joint feature vector `(t, a1, ..., ap)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub kind: MetricKind,
    /// Only meaningful for Mahalanobis; estimated from the data when absent.
    pub mahalanobis_covariance: Option<DMatrix<f64>>,
}

impl Metric {
    pub fn euclidean() -> Self {
        Metric::of_kind(MetricKind::Euclidean)
    }

    pub fn manhattan() -> Self {
        Metric::of_kind(MetricKind::Manhattan)
    }

    pub fn canberra() -> Self {
        Metric::of_kind(MetricKind::Canberra)
    }

    pub fn mahalanobis(covariance: Option<DMatrix<f64>>) -> Self {
        Metric {
            kind: MetricKind::Mahalanobis,
            mahalanobis_covariance: covariance,
        }
    }

    pub fn of_kind(kind: MetricKind) -> Self {
        Metric {
            kind,
            mahalanobis_covariance: None,
        }
    }

    /// Binds the metric to a dataset, estimating the Mahalanobis covariance from all
    /// units when none was supplied.
    pub fn prepare(&self, dataset: &Dataset) -> Result<PreparedMetric> {
        match self.kind {
            MetricKind::Mahalanobis => {
                let dim = dataset.p() + 1;
                let cov = match &self.mahalanobis_covariance {
                    Some(c) => c.clone(),
                    None => sample_covariance(&dataset.feature_matrix(), dim)?,
                };
                PreparedMetric::mahalanobis(&cov, dim)
            }
            kind => Ok(PreparedMetric { kind, whitener: None }),
        }
    }
}

impl Default for Metric {
    fn default() -> Self {
        Metric::euclidean()
    }
}

/// Sample covariance (denominator `n - 1`) of row-major data with `dim` columns.
pub fn sample_covariance(rows: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    let n = rows.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientData(
            "at least two units are needed to estimate a covariance".into(),
        ));
    }
    let mut mean = vec![0.0; dim];
    for row in rows.chunks_exact(dim) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for row in rows.chunks_exact(dim) {
        for a in 0..dim {
            let da = row[a] - mean[a];
            for b in a..dim {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// A metric ready for repeated evaluation. Mahalanobis holds `L^{-1}` with `C = L L^T`.
#[derive(Clone, Debug)]
pub struct PreparedMetric {
    kind: MetricKind,
    whitener: Option<DMatrix<f64>>,
}

impl PreparedMetric {
    fn mahalanobis(cov: &DMatrix<f64>, dim: usize) -> Result<Self> {
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: cov.nrows(),
            });
        }
        if (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite(
                "Mahalanobis covariance is not symmetric".into(),
            ));
        }
        let chol = cov.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite("Mahalanobis covariance".into())
        })?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(dim, dim))
            .ok_or_else(|| Error::NotPositiveDefinite("Mahalanobis covariance".into()))?;
        Ok(PreparedMetric {
            kind: MetricKind::Mahalanobis,
            whitener: Some(l_inv),
        })
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            MetricKind::Euclidean => x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            MetricKind::Manhattan => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
            MetricKind::Canberra => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let den = a.abs() + b.abs();
                    if den == 0.0 {
                        0.0
                    } else {
                        (a - b).abs() / den
                    }
                })
                .sum(),
            MetricKind::Mahalanobis => {
                let w = self.whitener.as_ref().expect("prepared Mahalanobis metric");
                let dim = x.len();
                let mut total = 0.0;
                // w is lower triangular
                for r in 0..dim {
                    let mut z = 0.0;
                    for c in 0..=r {
                        z += w[(r, c)] * (x[c] - y[c]);
                    }
                    total += z * z;
                }
                total.sqrt()
            }
        }
    }
}

/// Distance between two feature vectors. Mahalanobis requires a supplied covariance.
pub fn distance(x: &[f64], y: &[f64], metric: &Metric) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let prepared = match metric.kind {
        MetricKind::Mahalanobis => {
            let cov = metric.mahalanobis_covariance.as_ref().ok_or_else(|| {
                Error::InvalidInput("Mahalanobis distance needs a covariance matrix".into())
            })?;
            PreparedMetric::mahalanobis(cov, x.len())?
        }
        kind => PreparedMetric { kind, whitener: None },
    };
    Ok(prepared.distance(x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Verified,
    All,
}

/// `(distance, index)` ordered lexicographically.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Candidate {
    #[inline]
    fn cmp(&self, other: &Candidate) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

/// Brute-force neighbor search over one dataset.
pub struct NeighborSearch<'a> {
    dataset: &'a Dataset,
    metric: PreparedMetric,
    features: Vec<f64>,
    dim: usize,
}

impl<'a> NeighborSearch<'a> {
    pub fn new(dataset: &'a Dataset, metric: &Metric) -> Result<Self> {
        Ok(NeighborSearch {
            dataset,
            metric: metric.prepare(dataset)?,
            features: dataset.feature_matrix(),
            dim: dataset.p() + 1,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.metric.distance(self.row(i), self.row(j))
    }

    fn in_pool(&self, j: usize, pool: Pool) -> bool {
        match pool {
            Pool::All => true,
            Pool::Verified => self.dataset.units()[j].verified(),
        }
    }

    fn pool_size(&self, query: usize, pool: Pool) -> usize {
        let members = match pool {
            Pool::All => self.dataset.n(),
            Pool::Verified => self.dataset.n_verified(),
        };
        members - usize::from(self.in_pool(query, pool))
    }

    /// The `k` nearest members of `pool` to unit `query`, nearest first.
    pub fn k_nearest(&self, query: usize, k: usize, pool: Pool) -> Result<Vec<usize>> {
        if query >= self.dataset.n() {
            return Err(Error::InvalidInput(format!("query index {query} out of range")));
        }
        if k == 0 {
            return Err(Error::InvalidInput("k must be positive".into()));
        }
        let available = self.pool_size(query, pool);
        if k > available {
            return Err(Error::InsufficientData(format!(
                "k = {k} exceeds the {available} available neighbors"
            )));
        }
        Ok(self.k_nearest_unchecked(query, k, pool))
    }

    fn k_nearest_unchecked(&self, query: usize, k: usize, pool: Pool) -> Vec<usize> {
        let q = self.row(query);
        let mut best: Vec<Candidate> = Vec::with_capacity(k + 1);
        for j in 0..self.dataset.n() {
            if j == query || !self.in_pool(j, pool) {
                continue;
            }
            let cand = Candidate {
                dist: self.metric.distance(q, self.row(j)),
                index: j,
            };
            if best.len() == k && cand.cmp(&best[k - 1]) != Ordering::Less {
                continue;
            }
            let pos = best.partition_point(|b| b.cmp(&cand) == Ordering::Less);
            best.insert(pos, cand);
            best.truncate(k);
        }
        best.into_iter().map(|c| c.index).collect()
    }

    /// Class counts among the `k` nearest verified neighbors of `query`.
    fn label_counts(&self, query: usize, k: usize) -> [u32; NUM_CLASSES] {
        let mut counts = [0u32; NUM_CLASSES];
        for j in self.k_nearest_unchecked(query, k, Pool::Verified) {
            let class = self.dataset.units()[j].class_index().expect("verified neighbor");
            counts[class] += 1;
        }
        counts
    }
}

/// Unit indices sorted by ascending distance from `query` within `pool`.
pub fn knn_indices(dataset: &Dataset, query: usize, k: usize, metric: &Metric, pool: Pool) -> Result<Vec<usize>> {
    NeighborSearch::new(dataset, metric)?.k_nearest(query, k, pool)
}

/// Per-unit class frequencies among the `k` nearest verified neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoMatrix {
    k: usize,
    counts: Vec<[u32; NUM_CLASSES]>,
}

impl RhoMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self, i: usize) -> [u32; NUM_CLASSES] {
        self.counts[i]
    }

    pub fn row(&self, i: usize) -> [f64; NUM_CLASSES] {
        let k = self.k as f64;
        self.counts[i].map(|c| c as f64 / k)
    }

    pub fn rows(&self) -> Vec<[f64; NUM_CLASSES]> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }
}

fn check_imputation_size(dataset: &Dataset, k: usize, verified_queries: bool) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let n_ver = dataset.n_verified();
    let needed = if verified_queries { k + 1 } else { k };
    if n_ver < needed {
        return Err(Error::InsufficientData(format!(
            "{n_ver} verified units, need at least {needed} for k = {k}"
        )));
    }
    Ok(())
}

/// KNN imputation for every unit; verified units use leave-one-out neighborhoods.
pub fn impute_rho(dataset: &Dataset, k: usize, metric: &Metric) -> Result<RhoMatrix> {
    check_imputation_size(dataset, k, dataset.n_verified() > 0)?;
    let search = NeighborSearch::new(dataset, metric)?;
    let counts = (0..dataset.n())
        .into_par_iter()
        .map(|i| search.label_counts(i, k))
        .collect();
    Ok(RhoMatrix { k, counts })
}

/// Per-unit weights `V*D + (1 - V)*rho_K`: observed one-hot labels for verified units,
/// imputed frequencies for the rest.
pub(crate) fn imputation_weights(dataset: &Dataset, k: usize, metric: &Metric) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let unverified_exist = dataset.n_verified() < dataset.n();
    if !unverified_exist {
        if k == 0 {
            return Err(Error::InvalidInput("k must be positive".into()));
        }
        return Ok(dataset.units().iter().map(|u| u.one_hot()).collect());
    }
    check_imputation_size(dataset, k, false)?;
    let search = NeighborSearch::new(dataset, metric)?;
    let kf = k as f64;
    Ok((0..dataset.n())
        .into_par_iter()
        .map(|i| {
            let u = &dataset.units()[i];
            if u.verified() {
                u.one_hot()
            } else {
                search.label_counts(i, k).map(|c| c as f64 / kf)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KSelection {
    pub k_star: usize,
    /// Criterion value for `K = 1..=k_max`.
    pub criterion: Vec<f64>,
}

/// Index of the smallest value; values within `1e-12` of the minimum resolve to the
/// earliest position.
pub fn argmin_smallest(values: &[f64]) -> Option<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    values.iter().position(|&v| v <= min + 1e-12)
}

/// Leave-one-out choice of the neighborhood size by the L(1,1) disagreement between
/// observed labels and imputed frequencies over the first two classes.
pub fn select_k(dataset: &Dataset, metric: &Metric, k_max: usize) -> Result<KSelection> {
    let verified = dataset.verified_indices();
    let n_ver = verified.len();
    if n_ver < 2 {
        return Err(Error::InsufficientData(format!(
            "selecting K needs at least 2 verified units, found {n_ver}"
        )));
    }
    if k_max == 0 || k_max > n_ver - 1 {
        return Err(Error::InvalidInput(format!(
            "k_max must lie in [1, {}], got {k_max}",
            n_ver - 1
        )));
    }
    let search = NeighborSearch::new(dataset, metric)?;
    let per_unit: Vec<Vec<f64>> = verified
        .par_iter()
        .map(|&i| {
            let d = dataset.units()[i].one_hot();
            let neighbors = search.k_nearest_unchecked(i, k_max, Pool::Verified);
            let mut counts = [0u32; NUM_CLASSES];
            let mut out = Vec::with_capacity(k_max);
            for (m, &j) in neighbors.iter().enumerate() {
                counts[dataset.units()[j].class_index().expect("verified")] += 1;
                let kk = (m + 1) as f64;
                let err = (d[0] - counts[0] as f64 / kk).abs() + (d[1] - counts[1] as f64 / kk).abs();
                out.push(err);
            }
            out
        })
        .collect();
    let scale = 1.0 / (n_ver as f64 * (NUM_CLASSES - 1) as f64);
    let criterion: Vec<f64> = (0..k_max)
        .map(|m| per_unit.iter().map(|row| row[m]).sum::<f64>() * scale)
        .collect();
    let k_star = argmin_smallest(&criterion).expect("finite criterion") + 1;
    Ok(KSelection { k_star, criterion })
}

/// Adaptive-neighborhood verification probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropensityVector {
    pub values: Vec<f64>,
    /// Length of the neighbor list each value averages over.
    pub k_star: Vec<usize>,
}

/// Each unit's list starts with the unit itself (rank 1 at distance zero) and runs over
/// the other units, nearest first, up to and including the first one whose verification
/// status differs. The value is the verified fraction of the list: `1/len` for an
/// unverified unit, `(len-1)/len` for a verified one, so always in `(0, 1)`.
pub fn adaptive_propensity(dataset: &Dataset, metric: &Metric) -> Result<PropensityVector> {
    let n_ver = dataset.n_verified();
    if n_ver == 0 || n_ver == dataset.n() {
        return Err(Error::InvalidInput(
            "adaptive propensities need both verified and unverified units; \
             a fully verified dataset has unit propensity everywhere"
                .into(),
        ));
    }
    let search = NeighborSearch::new(dataset, metric)?;
    let units = dataset.units();
    let (values, k_star): (Vec<f64>, Vec<usize>) = (0..dataset.n())
        .into_par_iter()
        .map(|i| {
            let status = units[i].verified();
            let q = search.row(i);
            // Nearest unit of the opposite status.
            let mut stop = Candidate { dist: f64::INFINITY, index: usize::MAX };
            for j in 0..dataset.n() {
                if units[j].verified() != status {
                    let c = Candidate { dist: search.metric.distance(q, search.row(j)), index: j };
                    if c.cmp(&stop) == Ordering::Less {
                        stop = c;
                    }
                }
            }
            // Same-status units that precede it.
            let mut before = 0usize;
            for j in 0..dataset.n() {
                if j != i && units[j].verified() == status {
                    let c = Candidate { dist: search.metric.distance(q, search.row(j)), index: j };
                    if c.cmp(&stop) == Ordering::Less {
                        before += 1;
                    }
                }
            }
            if status {
                // self + `before` verified neighbors + the stopping unverified one
                let len = before + 2;
                ((before + 1) as f64 / len as f64, len)
            } else {
                let len = before + 2;
                (1.0 / len as f64, len)
            }
        })
        .unzip();
    Ok(PropensityVector { values, k_star })
}

/// Every pool member ordered by a full sort.
#[cfg(test)]
pub(crate) fn full_sort_oracle(dataset: &Dataset, query: usize, metric: &Metric, pool: Pool) -> Vec<usize> {
    let prepared = metric.prepare(dataset).unwrap();
    let q = dataset.features(query);
    let mut all: Vec<(f64, usize)> = (0..dataset.n())
        .filter(|&j| j != query && (pool == Pool::All || dataset.units()[j].verified()))
        .map(|j| (prepared.distance(&q, &dataset.features(j)), j))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().map(|(_, j)| j).collect()
}
