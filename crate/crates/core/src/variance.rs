//! Plug-in asymptotic covariance of the KNN TCF triple and confidence ellipsoids.
//!
//! Moment ordering in the 6x6 matrix: `(theta1, theta2, beta11, beta12, beta22, beta23)`.
//! Every matrix here is on the root-n scale; `estimate_tcf_knn_with_variance` divides by n.

use nalgebra::{Matrix3, Matrix6, Matrix3x6};
use serde::Serialize;

use crate::data::{CutPair, Dataset, TcfEstimate, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::knn::{knn_weights, MomentSet};
use crate::neighbors::{adaptive_propensity, impute_rho, Metric};
use crate::special::chi_square_quantile;
use crate::weighted::UnitWeights;

pub const DEFAULT_K_BAR: usize = 2;

/// Smoothed class probabilities (neighborhood `k_bar`) and adaptive propensities.
pub fn plugin_rho_pi(dataset: &Dataset, metric: &Metric, k_bar: usize) -> Result<(Vec<[f64; NUM_CLASSES]>, Vec<f64>)> {
    if k_bar < 2 {
        return Err(Error::InvalidInput(format!(
            "the plug-in neighborhood must be at least 2, got {k_bar}"
        )));
    }
    let rho = impute_rho(dataset, k_bar, metric)?.rows();
    let pi = if dataset.is_fully_verified() {
        vec![1.0; dataset.n()]
    } else {
        adaptive_propensity(dataset, metric)?.values
    };
    Ok((rho, pi))
}

/// Moment-level variance components. Each `psi_*` is named by its indicator and class
/// pair: `psi_12` (no indicator, classes 1 and 2), `psi_112` (`T >= c1`, classes 1, 2),
/// `psi_212` (`T >= c2`, classes 1, 2), `psi_213`, `psi_113`, `psi_223` likewise, and
/// `psi_1212` / `psi_1223` (`c1 <= T < c2`, classes 1, 2 / 2, 3).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaSet {
    pub omega_k: [f64; NUM_CLASSES],
    pub omega_jk: [[f64; NUM_CLASSES]; 2],
    pub eta_jk: [[f64; NUM_CLASSES]; 2],
    pub psi_1212: f64,
    pub psi_112: f64,
    pub psi_212: f64,
    pub psi_213: f64,
    pub psi_12: f64,
    pub psi_113: f64,
    pub psi_223: f64,
    pub psi_1223: f64,
    pub lambda_sq: f64,
    pub k_imputation: usize,
    pub k_bar: Option<usize>,
}

#[derive(Clone, Copy)]
enum Band {
    All,
    Above(usize),
    Below(usize),
    Middle,
}

/// `(K+1)/(nK) * sum I f (1-pi) + (1/n) * sum I f (1-pi)^2 / pi`, accumulated over units.
struct Accumulator {
    first: f64,
    second: f64,
}

impl Accumulator {
    #[inline]
    fn add(&mut self, f: f64, miss: f64, miss_sq_over_pi: f64) {
        self.first += f * miss;
        self.second += f * miss_sq_over_pi;
    }
    fn finish(&self, n: f64, k: f64) -> f64 {
        (k + 1.0) / (n * k) * self.first + self.second / n
    }
}

pub fn omega_terms(
    dataset: &Dataset,
    rho_tilde: &[[f64; NUM_CLASSES]],
    pi_tilde: &[f64],
    k_imputation: usize,
    moments: &MomentSet,
) -> Result<OmegaSet> {
    let n = dataset.n();
    if rho_tilde.len() != n || pi_tilde.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rho_tilde.len().min(pi_tilde.len()),
        });
    }
    if k_imputation == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if let Some(i) = pi_tilde.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Numerical(format!("plug-in propensity of unit {i} is not positive")));
    }
    let cut = moments.cut;
    let new = || Accumulator { first: 0.0, second: 0.0 };
    let mut om_k = [new(), new(), new()];
    let mut om_jk = [[new(), new(), new()], [new(), new(), new()]];
    let mut et_jk = [[new(), new(), new()], [new(), new(), new()]];
    // (band, class a, class b) in the field order of OmegaSet
    let pairs = [
        (Band::Middle, 0, 1),
        (Band::Above(0), 0, 1),
        (Band::Above(1), 0, 1),
        (Band::Above(1), 0, 2),
        (Band::All, 0, 1),
        (Band::Above(0), 0, 2),
        (Band::Above(1), 1, 2),
        (Band::Middle, 1, 2),
    ];
    let mut psi: Vec<Accumulator> = pairs.iter().map(|_| new()).collect();
    let cuts = [cut.c1(), cut.c2()];

    for ((u, rho), &pi) in dataset.units().iter().zip(rho_tilde).zip(pi_tilde) {
        let miss = 1.0 - pi;
        let sq = miss * miss / pi;
        let above = [u.t >= cuts[0], u.t >= cuts[1]];
        let in_band = |band: Band| match band {
            Band::All => true,
            Band::Above(j) => above[j],
            Band::Below(j) => !above[j],
            Band::Middle => above[0] && !above[1],
        };
        for k in 0..NUM_CLASSES {
            let f = rho[k] * (1.0 - rho[k]);
            om_k[k].add(f, miss, sq);
            for j in 0..2 {
                if in_band(Band::Above(j)) {
                    om_jk[j][k].add(f, miss, sq);
                }
                if in_band(Band::Below(j)) {
                    et_jk[j][k].add(f, miss, sq);
                }
            }
        }
        for (acc, &(band, a, b)) in psi.iter_mut().zip(&pairs) {
            if in_band(band) {
                acc.add(rho[a] * rho[b], miss, sq);
            }
        }
    }

    let nf = n as f64;
    let kf = k_imputation as f64;
    let omega_k = om_k.map(|a| a.finish(nf, kf));
    let omega_jk = om_jk.map(|row| row.map(|a| a.finish(nf, kf)));
    let eta_jk = et_jk.map(|row| row.map(|a| a.finish(nf, kf)));
    let p: Vec<f64> = psi.iter().map(|a| a.finish(nf, kf)).collect();

    let diff = moments.beta[0][1] - moments.beta[1][1];
    let lambda_sq = diff * (1.0 - diff) + omega_jk[0][1] - omega_jk[1][1];
    if lambda_sq < 0.0 {
        return Err(Error::NegativeVariance(format!(
            "lambda^2 = {lambda_sq:.3e} at cut {cut}"
        )));
    }
    Ok(OmegaSet {
        omega_k,
        omega_jk,
        eta_jk,
        psi_1212: p[0],
        psi_112: p[1],
        psi_212: p[2],
        psi_213: p[3],
        psi_12: p[4],
        psi_113: p[5],
        psi_223: p[6],
        psi_1223: p[7],
        lambda_sq,
        k_imputation,
        k_bar: None,
    })
}

/// Asymptotic covariance of the six moment estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaStar {
    pub matrix: Matrix6<f64>,
}

impl SigmaStar {
    pub fn new(m: &MomentSet, o: &OmegaSet) -> Self {
        let [t1, t2, _] = m.theta;
        let b11 = m.beta[0][0];
        let b12 = m.beta[0][1];
        let b22 = m.beta[1][1];
        let b23 = m.beta[1][2];
        let mut s = Matrix6::zeros();
        let mut set = |i: usize, j: usize, v: f64| {
            s[(i, j)] = v;
            s[(j, i)] = v;
        };
        set(0, 0, t1 * (1.0 - t1) + o.omega_k[0]);
        set(1, 1, t2 * (1.0 - t2) + o.omega_k[1]);
        set(2, 2, b11 * (1.0 - b11) + o.omega_jk[0][0]);
        set(3, 3, b12 * (1.0 - b12) + o.omega_jk[0][1]);
        set(4, 4, b22 * (1.0 - b22) + o.omega_jk[1][1]);
        set(5, 5, b23 * (1.0 - b23) + o.omega_jk[1][2]);

        set(0, 1, -(t1 * t2 + o.psi_12));
        set(0, 2, b11 - t1 * b11 + o.omega_jk[0][0]);
        set(0, 3, -(t1 * b12 + o.psi_112));
        set(0, 4, -(t1 * b22 + o.psi_212));
        set(0, 5, -(t1 * b23 + o.psi_213));

        set(1, 2, -(t2 * b11 + o.psi_112));
        set(1, 3, b12 - t2 * b12 + o.omega_jk[0][1]);
        set(1, 4, b22 - t2 * b22 + o.omega_jk[1][1]);
        set(1, 5, -(t2 * b23 + o.psi_223));

        set(2, 3, -(b11 * b12 + o.psi_112));
        set(2, 4, -(b11 * b22 + o.psi_212));
        set(2, 5, -(b11 * b23 + o.psi_213));

        set(3, 4, b22 - b12 * b22 + o.omega_jk[1][1]);
        set(3, 5, -(b12 * b23 + o.psi_223));

        set(4, 5, -(b22 * b23 + o.psi_223));
        SigmaStar { matrix: s }
    }
}

/// Root-n asymptotic covariance of the TCF triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Xi {
    pub matrix: Matrix3<f64>,
}

impl Xi {
    fn checked(matrix: Matrix3<f64>) -> Result<Self> {
        for k in 0..3 {
            let v = matrix[(k, k)];
            if !(v >= 0.0) {
                return Err(Error::NegativeVariance(format!(
                    "variance of TCF{} is {v:.3e}",
                    k + 1
                )));
            }
        }
        Ok(Xi { matrix })
    }

    pub fn to_array(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
    }
}

fn check_thetas(m: &MomentSet) -> Result<f64> {
    for k in 0..2 {
        if !(m.theta[k] > 0.0) {
            return Err(Error::EmptyClass {
                class: k + 1,
                denominator: m.theta[k],
            });
        }
    }
    let t3 = 1.0 - m.theta[0] - m.theta[1];
    if !(t3 > 0.0) {
        return Err(Error::EmptyClass {
            class: 3,
            denominator: t3,
        });
    }
    Ok(t3)
}

/// Element-wise closed forms.
pub fn xi_scalar(m: &MomentSet, o: &OmegaSet) -> Result<Xi> {
    let t3 = check_thetas(m)?;
    let [t1, t2, _] = m.theta;
    let b11 = m.beta[0][0];
    let b12 = m.beta[0][1];
    let b22 = m.beta[1][1];
    let b23 = m.beta[1][2];
    let diff = b12 - b22;

    let var_theta = |k: usize| m.theta[k] * (1.0 - m.theta[k]) + o.omega_k[k];
    let var_beta = |j: usize, k: usize| m.beta[j][k] * (1.0 - m.beta[j][k]) + o.omega_jk[j][k];
    let var_gamma = |j: usize, k: usize| m.gamma[j][k] * (1.0 - m.gamma[j][k]) + o.eta_jk[j][k];

    let s1 = var_theta(0);
    let s2 = var_theta(1);
    let s12_star = -(t1 * t2 + o.psi_12);
    let s3 = s1 + 2.0 * s12_star + s2;
    let s11 = var_beta(0, 0);
    let s23 = var_beta(1, 2);
    let s111 = 0.5 * (s1 + s11 - var_gamma(0, 0));
    let s212 = 0.5 * (s2 + var_beta(0, 1) - var_gamma(0, 1));
    let s222 = 0.5 * (s2 + var_beta(1, 1) - var_gamma(1, 1));
    let s323 = 0.5 * (s3 + s23 - var_gamma(1, 2));

    let xi1 = b11 * b11 / t1.powi(4) * s1 + s11 / (t1 * t1) - 2.0 * b11 / t1.powi(3) * s111;
    let xi2 = s2 * diff * diff / t2.powi(4) + o.lambda_sq / (t2 * t2) - 2.0 * diff / t2.powi(3) * (s212 - s222);
    let xi3 = b23 * b23 * s3 / t3.powi(4) + s23 / (t3 * t3) - 2.0 * b23 * s323 / t3.powi(3);

    let s1112_m_1122 = -(o.psi_1212 + b11 * diff);
    let s112_m_122 = -(o.psi_1212 + t1 * diff);
    let s211 = -(o.psi_112 + t2 * b11);
    let xi12 = -s1112_m_1122 / (t1 * t2) + b11 / (t1 * t1 * t2) * s112_m_122
        - diff / (t2 * t2) * (b11 / (t1 * t1) * s12_star - s211 / t1);

    let s123 = -(o.psi_213 + t1 * b23);
    let s1123 = -(o.psi_213 + b11 * b23);
    let s111_p_211 = o.psi_113 + t3 * b11;
    let xi13 = 1.0 / t3 * (b11 / (t1 * t1) * s123 - s1123 / t1)
        + b23 / (t1 * t3 * t3) * (b11 / t1 * (s1 + s12_star) - s111_p_211);

    let s1223_m_2223 = -b23 * diff;
    let s223 = -(o.psi_223 + t2 * b23);
    let s_mixed = o.psi_1223 + t3 * diff;
    let xi23 = 1.0 / (t2 * t3) * (s1223_m_2223 - diff / t2 * s223)
        + b23 / (t2 * t3 * t3) * (s_mixed - diff / t2 * (s2 + s12_star));

    Xi::checked(Matrix3::new(
        xi1, xi12, xi13, //
        xi12, xi2, xi23, //
        xi13, xi23, xi3,
    ))
}

/// Jacobian of `(1 - b11/t1, (b12 - b22)/t2, b23/(1 - t1 - t2))` in the moment ordering.
pub fn jacobian(m: &MomentSet) -> Result<Matrix3x6<f64>> {
    let t3 = check_thetas(m)?;
    let [t1, t2, _] = m.theta;
    let b11 = m.beta[0][0];
    let diff = m.beta[0][1] - m.beta[1][1];
    let b23 = m.beta[1][2];
    let mut h = Matrix3x6::zeros();
    h[(0, 0)] = b11 / (t1 * t1);
    h[(0, 2)] = -1.0 / t1;
    h[(1, 1)] = -diff / (t2 * t2);
    h[(1, 3)] = 1.0 / t2;
    h[(1, 4)] = -1.0 / t2;
    h[(2, 0)] = b23 / (t3 * t3);
    h[(2, 1)] = b23 / (t3 * t3);
    h[(2, 5)] = 1.0 / t3;
    Ok(h)
}

/// `h' Sigma* h'^T`, symmetrized.
pub fn xi_delta_method(m: &MomentSet, sigma: &SigmaStar) -> Result<Xi> {
    let h = jacobian(m)?;
    let raw = h * sigma.matrix * h.transpose();
    Xi::checked((raw + raw.transpose()) * 0.5)
}

/// Plug-in components bound to one dataset, reusable across cut pairs.
pub struct KnnVariance {
    weights: UnitWeights,
    rho_tilde: Vec<[f64; NUM_CLASSES]>,
    pi_tilde: Vec<f64>,
    k: usize,
    k_bar: usize,
    n: usize,
}

impl KnnVariance {
    pub fn new(dataset: &Dataset, k: usize, metric: &Metric, k_bar: usize) -> Result<Self> {
        let weights = knn_weights(dataset, k, metric)?;
        let (rho_tilde, pi_tilde) = plugin_rho_pi(dataset, metric, k_bar)?;
        Ok(Self::from_parts(dataset, weights, rho_tilde, pi_tilde, k, k_bar))
    }

    pub(crate) fn from_parts(
        dataset: &Dataset,
        weights: UnitWeights,
        rho_tilde: Vec<[f64; NUM_CLASSES]>,
        pi_tilde: Vec<f64>,
        k: usize,
        k_bar: usize,
    ) -> Self {
        KnnVariance { weights, rho_tilde, pi_tilde, k, k_bar, n: dataset.n() }
    }

    pub fn moments(&self, cut: CutPair) -> MomentSet {
        MomentSet::from_weights(&self.weights, self.k, cut)
    }

    pub fn omegas(&self, dataset: &Dataset, cut: CutPair) -> Result<OmegaSet> {
        let mut o = omega_terms(dataset, &self.rho_tilde, &self.pi_tilde, self.k, &self.moments(cut))?;
        o.k_bar = Some(self.k_bar);
        Ok(o)
    }

    /// TCF estimate carrying the finite-sample covariance `Xi / n`.
    pub fn estimate(&self, dataset: &Dataset, cut: CutPair) -> Result<TcfEstimate> {
        let mut est = self.weights.tcf(cut)?;
        let xi = xi_scalar(&self.moments(cut), &self.omegas(dataset, cut)?)?;
        let n = self.n as f64;
        est.covariance = Some(xi.to_array().map(|row| row.map(|v| v / n)));
        Ok(est)
    }
}

pub fn estimate_tcf_knn_with_variance(
    dataset: &Dataset,
    k: usize,
    metric: &Metric,
    cut: CutPair,
    k_bar: usize,
) -> Result<TcfEstimate> {
    KnnVariance::new(dataset, k, metric, k_bar)?.estimate(dataset, cut)
}

/// `{x : (x - center)^T C^{-1} (x - center) <= radius2}` with `C = L L^T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    /// Lower-triangular Cholesky factor of the covariance, row-major.
    pub cholesky: [[f64; 3]; 3],
    pub radius2: f64,
    pub level: f64,
}

impl Ellipsoid {
    /// Squared Mahalanobis distance of `x` from the center.
    pub fn distance2(&self, x: [f64; 3]) -> f64 {
        let l = &self.cholesky;
        let d = [0, 1, 2].map(|i| x[i] - self.center[i]);
        // forward substitution L z = d
        let z0 = d[0] / l[0][0];
        let z1 = (d[1] - l[1][0] * z0) / l[1][1];
        let z2 = (d[2] - l[2][0] * z0 - l[2][1] * z1) / l[2][2];
        z0 * z0 + z1 * z1 + z2 * z2
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        self.distance2(x) <= self.radius2
    }
}

pub fn confidence_ellipsoid(estimate: &TcfEstimate, level: f64) -> Result<Ellipsoid> {
    let cov = estimate.covariance.ok_or_else(|| {
        Error::InvalidInput("the estimate carries no covariance".into())
    })?;
    let c = Matrix3::from_fn(|i, j| cov[i][j]);
    let chol = c
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("TCF covariance".into()))?;
    let l = chol.l();
    Ok(Ellipsoid {
        center: estimate.tcf,
        cholesky: [0, 1, 2].map(|i| [0, 1, 2].map(|j| l[(i, j)])),
        radius2: chi_square_quantile(3.0, level)?,
        level,
    })
}
