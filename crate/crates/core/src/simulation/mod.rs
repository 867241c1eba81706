//! Synthetic study generators, their exact TCF and VUS values, and the Monte Carlo harness.
//!
//! Scenario I: class-conditional bivariate normal `(T, A)` with means `(2k, k)` and a
//! shared covariance, verification logistic-linear in `(T, A)`.
//! Scenario II: latent `S = Z1 + Z2 ~ N(0, 1)` thresholded into three classes,
//! `T = alpha*S + e1`, `A = S + e2`, noise variance 0.25.

pub mod monte_carlo;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::{CutPair, Dataset, Unit, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::parametric::logit::logistic;
use crate::special::{integrate, normal_cdf, normal_pdf, normal_quantile};

pub use monte_carlo::{parse_config, run_monte_carlo, write_table, McConfig, Scenario, SummaryRow, SummaryTable};

/// The three `(T, A)` covariance choices, indexed 1..=3.
pub const SIGMA_CHOICES: [[[f64; 2]; 2]; 3] = [
    [[1.75, 0.1], [0.1, 2.5]],
    [[2.5, 1.5], [1.5, 2.5]],
    [[5.5, 3.0], [3.0, 2.5]],
];

pub fn sigma_choice(index: usize) -> Result<[[f64; 2]; 2]> {
    index
        .checked_sub(1)
        .and_then(|i| SIGMA_CHOICES.get(i))
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("sigma_choice must be 1, 2 or 3, got {index}")))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioIConfig {
    pub theta: [f64; NUM_CLASSES],
    pub sigma: [[f64; 2]; 2],
    /// Intercept, `T` and `A` coefficients of the verification logit.
    pub delta: [f64; 3],
    pub n: usize,
    pub seed: u64,
}

impl ScenarioIConfig {
    pub fn new(sigma_choice_index: usize, n: usize, seed: u64) -> Result<Self> {
        Ok(ScenarioIConfig {
            theta: [0.4, 0.35, 0.25],
            sigma: sigma_choice(sigma_choice_index)?,
            delta: [0.5, -0.3, 0.75],
            n,
            seed,
        })
    }

    /// Class mean of `(T, A)`, zero-based class index.
    pub fn mean(k: usize) -> [f64; 2] {
        let k = (k + 1) as f64;
        [2.0 * k, k]
    }

    fn validate(&self) -> Result<()> {
        let s = &self.sigma;
        if !(s[0][0] > 0.0 && s[0][0] * s[1][1] - s[0][1] * s[1][0] > 0.0) || s[0][1] != s[1][0] {
            return Err(Error::NotPositiveDefinite("scenario covariance".into()));
        }
        let total: f64 = self.theta.iter().sum();
        if self.theta.iter().any(|&x| !(x > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("class proportions must be positive and sum to 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioIIConfig {
    pub alpha: f64,
    pub h1: f64,
    pub h2: f64,
    pub noise_var: f64,
    pub delta: [f64; 3],
    pub n: usize,
    pub seed: u64,
}

impl ScenarioIIConfig {
    pub fn new(alpha: f64, n: usize, seed: u64) -> Result<Self> {
        let (h1, h2) = solve_thresholds(0.4, 0.25)?;
        Ok(ScenarioIIConfig {
            alpha,
            h1,
            h2,
            noise_var: 0.25,
            delta: [-1.5, -0.35, -1.5],
            n,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.h1 < self.h2) || !self.alpha.is_finite() || !(self.noise_var > 0.0) || self.n == 0 {
            return Err(Error::InvalidInput("invalid scenario II configuration".into()));
        }
        Ok(())
    }
}

fn draw_class<R: Rng>(rng: &mut R, theta: &[f64; NUM_CLASSES]) -> usize {
    let u: f64 = rng.random();
    if u < theta[0] {
        0
    } else if u < theta[0] + theta[1] {
        1
    } else {
        2
    }
}

/// Every unit keeps its class label; the flags say which ones the selection verifies.
pub fn generate_scenario_i_labelled_with<R: Rng>(config: &ScenarioIConfig, rng: &mut R) -> Result<(Dataset, Vec<bool>)> {
    config.validate()?;
    let s = &config.sigma;
    let l11 = s[0][0].sqrt();
    let l21 = s[0][1] / l11;
    let l22 = (s[1][1] - l21 * l21).sqrt();
    let [d0, d1, d2] = config.delta;
    let (units, flags): (Vec<Unit>, Vec<bool>) = (0..config.n)
        .map(|_| {
            let k = draw_class(rng, &config.theta);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let [mt, ma] = ScenarioIConfig::mean(k);
            let t = mt + l11 * z1;
            let a = ma + l21 * z1 + l22 * z2;
            let verified = rng.random::<f64>() < logistic(d0 + d1 * t + d2 * a);
            (Unit::new(t, vec![a], Some(k as u8 + 1)), verified)
        })
        .unzip();
    Ok((Dataset::new(units)?, flags))
}

pub fn generate_scenario_i_with<R: Rng>(config: &ScenarioIConfig, rng: &mut R) -> Result<Dataset> {
    let (full, flags) = generate_scenario_i_labelled_with(config, rng)?;
    full.with_verification(&flags)
}

pub fn generate_scenario_i(config: &ScenarioIConfig) -> Result<Dataset> {
    generate_scenario_i_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

pub fn generate_scenario_ii_labelled_with<R: Rng>(config: &ScenarioIIConfig, rng: &mut R) -> Result<(Dataset, Vec<bool>)> {
    config.validate()?;
    let half = 0.5f64.sqrt();
    let noise = config.noise_var.sqrt();
    let [d0, d1, d2] = config.delta;
    let (units, flags): (Vec<Unit>, Vec<bool>) = (0..config.n)
        .map(|_| {
            let z1: f64 = rng.sample::<f64, _>(StandardNormal) * half;
            let z2: f64 = rng.sample::<f64, _>(StandardNormal) * half;
            let e1: f64 = rng.sample::<f64, _>(StandardNormal) * noise;
            let e2: f64 = rng.sample::<f64, _>(StandardNormal) * noise;
            let s = z1 + z2;
            let class = if s <= config.h1 {
                1
            } else if s <= config.h2 {
                2
            } else {
                3
            };
            let t = config.alpha * s + e1;
            let a = s + e2;
            let verified = rng.random::<f64>() < logistic(d0 + d1 * t + d2 * a);
            (Unit::new(t, vec![a], Some(class)), verified)
        })
        .unzip();
    Ok((Dataset::new(units)?, flags))
}

pub fn generate_scenario_ii_with<R: Rng>(config: &ScenarioIIConfig, rng: &mut R) -> Result<Dataset> {
    let (full, flags) = generate_scenario_ii_labelled_with(config, rng)?;
    full.with_verification(&flags)
}

pub fn generate_scenario_ii_labelled(config: &ScenarioIIConfig) -> Result<(Dataset, Vec<bool>)> {
    generate_scenario_ii_labelled_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

pub fn generate_scenario_ii(config: &ScenarioIIConfig) -> Result<Dataset> {
    generate_scenario_ii_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// Latent thresholds giving class-1 share `theta1` and class-3 share `theta3`.
pub fn solve_thresholds(theta1: f64, theta3: f64) -> Result<(f64, f64)> {
    if !(theta1 > 0.0 && theta3 > 0.0 && theta1 + theta3 < 1.0) {
        return Err(Error::InvalidInput(format!(
            "class shares {theta1} and {theta3} must be positive with sum below 1"
        )));
    }
    Ok((normal_quantile(theta1)?, normal_quantile(1.0 - theta3)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TruthMethod {
    ClosedFormPhi,
    NumericIntegration,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioTruth {
    pub tcf: [f64; 3],
    pub cut: CutPair,
    pub method: TruthMethod,
}

pub fn true_tcf_scenario_i(sigma: &[[f64; 2]; 2], cut: CutPair) -> ScenarioTruth {
    let s = sigma[0][0].sqrt();
    let (c1, c2) = (cut.c1(), cut.c2());
    ScenarioTruth {
        tcf: [
            normal_cdf((c1 - 2.0) / s),
            normal_cdf((c2 - 4.0) / s) - normal_cdf((c1 - 4.0) / s),
            1.0 - normal_cdf((c2 - 6.0) / s),
        ],
        cut,
        method: TruthMethod::ClosedFormPhi,
    }
}

/// Latent-variable integrals are truncated at this many standard deviations.
const LATENT_RANGE: f64 = 12.0;
const QUAD_TOL: f64 = 1e-11;

/// Truth under scenario II, with the latent integral evaluated to `tol`.
pub fn true_tcf_scenario_ii_tol(config: &ScenarioIIConfig, cut: CutPair, tol: f64) -> ScenarioTruth {
    let sd = config.noise_var.sqrt();
    let alpha = config.alpha;
    let (h1, h2) = (config.h1, config.h2);
    let below = |c: f64| move |z: f64| normal_cdf((c - alpha * z) / sd) * normal_pdf(z);
    let (c1, c2) = (cut.c1(), cut.c2());
    let tcf1 = integrate(below(c1), -LATENT_RANGE, h1, tol) / normal_cdf(h1);
    let middle = integrate(below(c2), h1, h2, tol) - integrate(below(c1), h1, h2, tol);
    let tcf2 = middle / (normal_cdf(h2) - normal_cdf(h1));
    let tcf3 = 1.0 - integrate(below(c2), h2, LATENT_RANGE, tol) / normal_cdf(-h2);
    ScenarioTruth {
        tcf: [tcf1, tcf2, tcf3],
        cut,
        method: TruthMethod::NumericIntegration,
    }
}

pub fn true_tcf_scenario_ii(config: &ScenarioIIConfig, cut: CutPair) -> ScenarioTruth {
    true_tcf_scenario_ii_tol(config, cut, QUAD_TOL)
}

/// `P(T1 < T2 < T3)` for independent `T_k ~ N(2k, sigma_T^2)`.
pub fn true_vus_scenario_i(sigma: &[[f64; 2]; 2]) -> f64 {
    let s = sigma[0][0].sqrt();
    let f = |t: f64| normal_cdf((t - 2.0) / s) * normal_cdf((6.0 - t) / s) * normal_pdf((t - 4.0) / s) / s;
    integrate(f, 4.0 - LATENT_RANGE * s, 4.0 + LATENT_RANGE * s, 1e-12)
}

/// Empirical VUS: the share of (class 1, class 2, class 3) triples in strict order.
/// With `tie_weights`, ties score 1/2 (one tied pair) or 1/6 (all three tied).
pub fn complete_data_vus(dataset: &Dataset, tie_weights: bool) -> Result<f64> {
    if !dataset.is_fully_verified() {
        return Err(Error::InvalidInput("VUS needs a fully verified dataset".into()));
    }
    let mut by_class: [Vec<f64>; NUM_CLASSES] = Default::default();
    for u in dataset.units() {
        by_class[u.class_index().expect("verified")].push(u.t);
    }
    for (k, values) in by_class.iter_mut().enumerate() {
        if values.is_empty() {
            return Err(Error::EmptyClass {
                class: k + 1,
                denominator: 0.0,
            });
        }
        values.sort_by(f64::total_cmp);
    }
    let [first, second, third] = &by_class;
    let mut total = 0.0;
    for &t in second {
        let less = first.partition_point(|&x| x < t) as f64;
        let tied1 = first.partition_point(|&x| x <= t) as f64 - less;
        let at_most = third.partition_point(|&x| x <= t);
        let greater = (third.len() - at_most) as f64;
        let tied3 = at_most as f64 - third.partition_point(|&x| x < t) as f64;
        total += less * greater;
        if tie_weights {
            total += 0.5 * (tied1 * greater + less * tied3) + tied1 * tied3 / 6.0;
        }
    }
    Ok(total / (first.len() * second.len() * third.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cut(a: f64, b: f64) -> CutPair {
        CutPair::new(a, b).unwrap()
    }

    #[test]
    fn truth_closed_form_rows() {
        let s1 = sigma_choice(1).unwrap();
        let t = true_tcf_scenario_i(&s1, cut(2.0, 4.0)).tcf;
        for (got, want) in t.iter().zip([0.5000, 0.4347, 0.9347]) {
            assert!((got - want).abs() < 5e-5);
        }
        let t = true_tcf_scenario_i(&s1, cut(2.0, 5.0)).tcf;
        for (got, want) in t.iter().zip([0.5000, 0.7099, 0.7752]) {
            assert!((got - want).abs() < 5e-5);
        }
        for i in 1..=3 {
            assert_eq!(true_tcf_scenario_i(&sigma_choice(i).unwrap(), cut(2.0, 3.0)).tcf[0], 0.5);
        }
        assert!(sigma_choice(0).is_err() && sigma_choice(4).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(solve_thresholds(0.5, 0.2).unwrap().0, 0.0);
        let (h1, h2) = solve_thresholds(0.4, 0.25).unwrap();
        assert!((h1 + 0.253_347_103_135_800).abs() < 1e-12);
        assert!((h2 - 0.674_489_750_196_082).abs() < 1e-12);
        assert!(solve_thresholds(0.6, 0.4).is_err());
    }

    #[test]
    fn scenario_ii_truth_and_quadrature_convergence() {
        let cfg = ScenarioIIConfig::new(0.5, 10, 0).unwrap();
        let t = true_tcf_scenario_ii(&cfg, cut(-1.0, -0.5));
        for (got, want) in t.tcf.iter().zip([0.1812, 0.1070, 0.9817]) {
            assert!((got - want).abs() < 5e-5, "{got} vs {want}");
        }
        let t = true_tcf_scenario_ii(&cfg, cut(0.7, 1.3));
        for (got, want) in t.tcf.iter().zip([0.9836, 0.1122, 0.1171]) {
            assert!((got - want).abs() < 5e-5, "{got} vs {want}");
        }
        let coarse = true_tcf_scenario_ii_tol(&cfg, cut(-1.0, 0.7), 1e-8);
        let fine = true_tcf_scenario_ii_tol(&cfg, cut(-1.0, 0.7), 5e-9);
        for k in 0..3 {
            assert!((coarse.tcf[k] - fine.tcf[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn vus_truth_and_separation_limit() {
        assert!((true_vus_scenario_i(&sigma_choice(1).unwrap()) - 0.7175).abs() < 5e-4);
        assert!((true_vus_scenario_i(&sigma_choice(3).unwrap()) - 0.4778).abs() < 5e-4);
        let tiny = [[1e-4, 0.0], [0.0, 1.0]];
        assert!((true_vus_scenario_i(&tiny) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = ScenarioIConfig::new(1, 200, 11).unwrap();
        assert_eq!(generate_scenario_i(&cfg).unwrap(), generate_scenario_i(&cfg).unwrap());
        let cfg2 = ScenarioIIConfig::new(0.5, 200, 11).unwrap();
        assert_eq!(generate_scenario_ii(&cfg2).unwrap(), generate_scenario_ii(&cfg2).unwrap());
        let mut other = cfg.clone();
        other.seed = 12;
        assert_ne!(generate_scenario_i(&cfg).unwrap(), generate_scenario_i(&other).unwrap());
    }

    fn labelled(values: &[(f64, u8)]) -> Dataset {
        Dataset::new(values.iter().map(|&(t, d)| Unit::new(t, vec![0.0], Some(d))).collect()).unwrap()
    }

    fn vus_oracle(ds: &Dataset, tie_weights: bool) -> f64 {
        let class = |k: u8| -> Vec<f64> { ds.units().iter().filter(|u| u.d == Some(k)).map(|u| u.t).collect() };
        let (x, y, z) = (class(1), class(2), class(3));
        let mut s = 0.0;
        for &a in &x {
            for &b in &y {
                for &c in &z {
                    s += if a < b && b < c {
                        1.0
                    } else if !tie_weights {
                        0.0
                    } else if a == b && b == c {
                        1.0 / 6.0
                    } else if (a == b && b < c) || (a < b && b == c) {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / (x.len() * y.len() * z.len()) as f64
    }

    #[test]
    fn vus_edge_cases() {
        let ordered = labelled(&[(0.0, 1), (1.0, 1), (2.0, 2), (3.0, 2), (4.0, 3)]);
        assert_eq!(complete_data_vus(&ordered, false).unwrap(), 1.0);
        let flat = labelled(&[(1.0, 1), (1.0, 2), (1.0, 3)]);
        assert_eq!(complete_data_vus(&flat, false).unwrap(), 0.0);
        assert!((complete_data_vus(&flat, true).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(complete_data_vus(&labelled(&[(1.0, 1), (2.0, 2)]), false).is_err());
    }

    proptest! {
        #[test]
        fn vus_matches_triple_loop(values in prop::collection::vec((0u8..8, 1u8..=3), 3..60)) {
            let mut rows: Vec<(f64, u8)> = values.iter().map(|&(t, d)| (f64::from(t), d)).collect();
            rows.extend([(0.0, 1), (3.0, 2), (6.0, 3)]);
            let ds = labelled(&rows);
            for ties in [false, true] {
                let fast = complete_data_vus(&ds, ties).unwrap();
                let slow = vus_oracle(&ds, ties);
                prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
            }
        }
    }
}
