//! Maximum-likelihood logistic fits by damped Newton iteration.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

/// `log(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_design(x: &DMatrix<f64>, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: n,
        });
    }
    if n <= x.ncols() {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {} coefficients",
            x.ncols()
        )));
    }
    for c in 1..x.ncols() {
        let col = x.column(c);
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::InvalidInput(format!(
                "design column {c} is constant"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogitModel {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Inverse observed information at the final iterate, when it exists.
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
}

impl LogitModel {
    /// A model that predicts `p` for every design row.
    pub fn constant(p: f64, width: usize) -> Self {
        let mut coefficients = vec![0.0; width];
        coefficients[0] = if p >= 1.0 { f64::INFINITY } else { (p / (1.0 - p)).ln() };
        LogitModel {
            coefficients,
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
            covariance: None,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        if self.coefficients[0] == f64::INFINITY {
            return 1.0;
        }
        logistic(row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum())
    }

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].sqrt()).collect())
    }
}

fn binary_loglik(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

/// Binary logistic regression of `y` (0/1 entries) on the design `x`.
pub fn fit_binary_logit(x: &DMatrix<f64>, y: &[f64], max_iter: usize, tol: f64) -> Result<LogitModel> {
    check_design(x, y.len())?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("binary response must be 0 or 1".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::InvalidInput("degenerate response".into()));
    }
    let q = x.ncols();
    let mut beta = DVector::zeros(q);
    let mut ll = binary_loglik(x, y, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut covariance = None;
    for iter in 1..=max_iter {
        iterations = iter;
        let eta = x * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        if p.iter().zip(y).all(|(pi, yi)| (pi - yi).abs() < 1e-8) {
            // perfect separation: the likelihood has no finite maximizer
            break;
        }
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&p).map(|(yi, pi)| yi - pi));
        let grad = x.transpose() * resid;
        let mut xw = x.clone();
        for (r, pi) in p.iter().enumerate() {
            let w = pi * (1.0 - pi);
            xw.row_mut(r).scale_mut(w);
        }
        let hessian = x.transpose() * xw;
        let Some(chol) = hessian.cholesky() else { break };
        let step = chol.solve(&grad);
        covariance = Some(chol.inverse());

        let mut scale = 1.0;
        let (mut next, mut next_ll);
        loop {
            next = &beta + &step * scale;
            next_ll = binary_loglik(x, y, &next);
            if next_ll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        let change = (0..q)
            .map(|j| (next[j] - beta[j]).abs() / beta[j].abs().max(1.0))
            .fold(0.0, f64::max);
        beta = next;
        ll = next_ll;
        if beta.amax() > 1e4 || !ll.is_finite() {
            break;
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(LogitModel {
        coefficients: beta.iter().copied().collect(),
        converged,
        iterations,
        log_likelihood: ll,
        covariance: if converged { covariance } else { None },
    })
}

/// Multinomial logit with class 3 as reference; row `a` of the coefficients belongs to
/// class `a + 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultinomialLogitModel {
    pub coefficients: [Vec<f64>; 2],
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Covariance of the stacked coefficients `(class 1 row, class 2 row)`.
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
}

impl MultinomialLogitModel {
    pub fn predict(&self, row: &[f64]) -> [f64; 3] {
        let eta = [0, 1].map(|a| {
            row.iter()
                .zip(&self.coefficients[a])
                .map(|(x, b)| x * b)
                .sum::<f64>()
        });
        softmax_with_reference(eta)
    }

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].sqrt()).collect())
    }
}

#[inline]
fn softmax_with_reference(eta: [f64; 2]) -> [f64; 3] {
    let m = eta[0].max(eta[1]).max(0.0);
    let e = [(eta[0] - m).exp(), (eta[1] - m).exp(), (-m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

fn multinomial_loglik(x: &DMatrix<f64>, labels: &[usize], beta: &DVector<f64>) -> f64 {
    let q = x.ncols();
    let mut ll = 0.0;
    for (r, &lab) in labels.iter().enumerate() {
        let row = x.row(r);
        let eta = [0, 1].map(|a| (0..q).map(|c| row[c] * beta[a * q + c]).sum::<f64>());
        let m = eta[0].max(eta[1]).max(0.0);
        let lse = m + ((eta[0] - m).exp() + (eta[1] - m).exp() + (-m).exp()).ln();
        let own = if lab < 2 { eta[lab] } else { 0.0 };
        ll += own - lse;
    }
    ll
}

/// Multinomial logistic regression of class labels in `1..=3` on the design `x`.
pub fn fit_multinomial_logit(x: &DMatrix<f64>, labels: &[u8], max_iter: usize, tol: f64) -> Result<MultinomialLogitModel> {
    check_design(x, labels.len())?;
    if labels.iter().any(|&d| !(1..=3).contains(&d)) {
        return Err(Error::InvalidInput("class labels must lie in 1..=3".into()));
    }
    if labels.iter().all(|&d| d == labels[0]) {
        return Err(Error::InvalidInput("degenerate response".into()));
    }
    let lab: Vec<usize> = labels.iter().map(|&d| d as usize - 1).collect();
    let q = x.ncols();
    let dim = 2 * q;
    let mut beta = DVector::zeros(dim);
    let mut ll = multinomial_loglik(x, &lab, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut covariance = None;
    for iter in 1..=max_iter {
        iterations = iter;
        let mut grad = DVector::zeros(dim);
        let mut hessian = DMatrix::zeros(dim, dim);
        let mut worst_fit: f64 = 0.0;
        for (r, &l) in lab.iter().enumerate() {
            let row = x.row(r);
            let eta = [0, 1].map(|a| (0..q).map(|c| row[c] * beta[a * q + c]).sum::<f64>());
            let p = softmax_with_reference(eta);
            worst_fit = worst_fit.max(1.0 - p[l]);
            for a in 0..2 {
                let ya = if l == a { 1.0 } else { 0.0 };
                for c in 0..q {
                    grad[a * q + c] += row[c] * (ya - p[a]);
                }
                for b in 0..2 {
                    let w = p[a] * (if a == b { 1.0 } else { 0.0 } - p[b]);
                    for c in 0..q {
                        let xc = row[c] * w;
                        for d in 0..q {
                            hessian[(a * q + c, b * q + d)] += xc * row[d];
                        }
                    }
                }
            }
        }
        if worst_fit < 1e-8 {
            break;
        }
        let Some(chol) = hessian.cholesky() else { break };
        let step = chol.solve(&grad);
        covariance = Some(chol.inverse());

        let mut scale = 1.0;
        let (mut next, mut next_ll);
        loop {
            next = &beta + &step * scale;
            next_ll = multinomial_loglik(x, &lab, &next);
            if next_ll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        let change = (0..dim)
            .map(|j| (next[j] - beta[j]).abs() / beta[j].abs().max(1.0))
            .fold(0.0, f64::max);
        beta = next;
        ll = next_ll;
        if beta.amax() > 1e4 || !ll.is_finite() {
            break;
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(MultinomialLogitModel {
        coefficients: [
            beta.rows(0, q).iter().copied().collect(),
            beta.rows(q, q).iter().copied().collect(),
        ],
        converged,
        iterations,
        log_likelihood: ll,
        covariance: if converged { covariance } else { None },
    })
}
