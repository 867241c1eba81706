//! Comparator estimators built on parametric working models: full imputation (FI),
//! mean-score imputation (MSI), inverse probability weighting (IPW) and the
//! semiparametric efficient estimator (SPE).

pub mod formula;
pub mod logit;

use serde::Serialize;

pub use formula::Formula;
pub use logit::{
    fit_binary_logit, fit_multinomial_logit, LogitModel, MultinomialLogitModel, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

use crate::data::{CutPair, Dataset, EstimatorTag, TcfEstimate, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::weighted::UnitWeights;

/// Verified units below this propensity are rejected (or clamped to it on request).
pub const PROPENSITY_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NuisanceEstimates {
    /// `P(class k | t, a)` for every unit.
    pub rho_hat: Vec<[f64; NUM_CLASSES]>,
    /// `P(verified | t, a)` for every unit.
    pub pi_hat: Vec<f64>,
    pub disease_model: Option<MultinomialLogitModel>,
    pub verification_model: Option<LogitModel>,
    pub warnings: Vec<String>,
}

impl NuisanceEstimates {
    /// Caller-supplied nuisance values (no fitted models).
    pub fn from_values(rho_hat: Vec<[f64; NUM_CLASSES]>, pi_hat: Vec<f64>) -> Result<Self> {
        if rho_hat.len() != pi_hat.len() {
            return Err(Error::DimensionMismatch {
                expected: rho_hat.len(),
                got: pi_hat.len(),
            });
        }
        Ok(NuisanceEstimates {
            rho_hat,
            pi_hat,
            disease_model: None,
            verification_model: None,
            warnings: Vec::new(),
        })
    }
}

/// Disease model on verified units, verification model on all units.
pub fn estimate_nuisance(dataset: &Dataset, disease_formula: &Formula, verification_formula: &Formula) -> Result<NuisanceEstimates> {
    let verified = dataset.verified_indices();
    if verified.is_empty() {
        return Err(Error::InsufficientData(
            "the disease model needs verified units".into(),
        ));
    }
    let mut warnings = Vec::new();

    let labels: Vec<u8> = verified.iter().map(|&i| dataset.units()[i].d.expect("verified")).collect();
    let x_ver = disease_formula.design(dataset, &verified)?;
    let disease = fit_multinomial_logit(&x_ver, &labels, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    if !disease.converged {
        warnings.push(format!(
            "disease model did not converge after {} iterations",
            disease.iterations
        ));
    }
    let mut rho_hat = Vec::with_capacity(dataset.n());
    for u in dataset.units() {
        rho_hat.push(disease.predict(&disease_formula.row(u)?));
    }

    let (pi_hat, verification_model) = if verified.len() == dataset.n() {
        warnings.push("every unit is verified; verification probability set to 1".into());
        (vec![1.0; dataset.n()], None)
    } else {
        let all: Vec<usize> = (0..dataset.n()).collect();
        let x_all = verification_formula.design(dataset, &all)?;
        let v: Vec<f64> = dataset.units().iter().map(|u| f64::from(u8::from(u.verified()))).collect();
        let model = fit_binary_logit(&x_all, &v, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        if !model.converged {
            warnings.push(format!(
                "verification model did not converge after {} iterations",
                model.iterations
            ));
        }
        let mut pi = Vec::with_capacity(dataset.n());
        for u in dataset.units() {
            pi.push(model.predict(&verification_formula.row(u)?));
        }
        (pi, Some(model))
    };

    Ok(NuisanceEstimates {
        rho_hat,
        pi_hat,
        disease_model: Some(disease),
        verification_model,
        warnings,
    })
}

fn checked_propensities(dataset: &Dataset, nuisance: &NuisanceEstimates, clamp: bool) -> Result<Vec<f64>> {
    let offending: Vec<usize> = dataset
        .units()
        .iter()
        .zip(&nuisance.pi_hat)
        .enumerate()
        .filter(|(_, (u, &p))| u.verified() && !(p >= PROPENSITY_FLOOR))
        .map(|(i, _)| i)
        .collect();
    if !offending.is_empty() && !clamp {
        return Err(Error::Positivity {
            floor: PROPENSITY_FLOOR,
            units: offending,
        });
    }
    Ok(nuisance
        .pi_hat
        .iter()
        .map(|&p| if clamp { p.max(PROPENSITY_FLOOR) } else { p })
        .collect())
}

/// Per-unit class weights of one of the parametric estimators.
pub fn parametric_weights(dataset: &Dataset, nuisance: &NuisanceEstimates, tag: EstimatorTag, clamp: bool) -> Result<UnitWeights> {
    let n = dataset.n();
    if nuisance.rho_hat.len() != n || nuisance.pi_hat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: nuisance.rho_hat.len(),
        });
    }
    let units = dataset.units();
    let w: Vec<[f64; NUM_CLASSES]> = match tag {
        EstimatorTag::Fi => nuisance.rho_hat.clone(),
        EstimatorTag::Msi => units
            .iter()
            .zip(&nuisance.rho_hat)
            .map(|(u, rho)| if u.verified() { u.one_hot() } else { *rho })
            .collect(),
        EstimatorTag::Ipw => {
            let pi = checked_propensities(dataset, nuisance, clamp)?;
            units
                .iter()
                .zip(&pi)
                .map(|(u, &p)| if u.verified() { u.one_hot().map(|d| d / p) } else { [0.0; NUM_CLASSES] })
                .collect()
        }
        EstimatorTag::Spe => {
            let pi = checked_propensities(dataset, nuisance, clamp)?;
            units
                .iter()
                .zip(&pi)
                .zip(&nuisance.rho_hat)
                .map(|((u, &p), rho)| {
                    let v = if u.verified() { 1.0 } else { 0.0 };
                    let d = u.one_hot();
                    [0, 1, 2].map(|k| v * d[k] / p - rho[k] * (v - p) / p)
                })
                .collect()
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "{other} is not a parametric estimator"
            )))
        }
    };
    Ok(UnitWeights::new(dataset.t_values(), w, tag, None))
}

pub fn estimate_tcf_fi(dataset: &Dataset, nuisance: &NuisanceEstimates, cut: CutPair) -> Result<TcfEstimate> {
    parametric_weights(dataset, nuisance, EstimatorTag::Fi, false)?.tcf(cut)
}

pub fn estimate_tcf_msi(dataset: &Dataset, nuisance: &NuisanceEstimates, cut: CutPair) -> Result<TcfEstimate> {
    parametric_weights(dataset, nuisance, EstimatorTag::Msi, false)?.tcf(cut)
}

pub fn estimate_tcf_ipw(dataset: &Dataset, nuisance: &NuisanceEstimates, cut: CutPair, clamp: bool) -> Result<TcfEstimate> {
    parametric_weights(dataset, nuisance, EstimatorTag::Ipw, clamp)?.tcf(cut)
}

pub fn estimate_tcf_spe(dataset: &Dataset, nuisance: &NuisanceEstimates, cut: CutPair, clamp: bool) -> Result<TcfEstimate> {
    parametric_weights(dataset, nuisance, EstimatorTag::Spe, clamp)?.tcf(cut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::knn::complete_data_tcf;
    use crate::knn::tests::mixed_dataset;
    use proptest::prelude::*;

    fn cut(a: f64, b: f64) -> CutPair {
        CutPair::new(a, b).unwrap()
    }

    fn oracle_nuisance(ds: &Dataset) -> NuisanceEstimates {
        NuisanceEstimates::from_values(
            ds.units().iter().map(|u| u.one_hot()).collect(),
            vec![1.0; ds.n()],
        )
        .unwrap()
    }

    #[test]
    fn perfect_nuisance_reduces_to_complete_data() {
        for seed in 0..20 {
            let ds = mixed_dataset(80, 1.0, seed);
            let nu = oracle_nuisance(&ds);
            let c = cut(3.0, 5.0);
            let want = complete_data_tcf(&ds, c).unwrap().tcf;
            assert_eq!(estimate_tcf_fi(&ds, &nu, c).unwrap().tcf, want);
            assert_eq!(estimate_tcf_msi(&ds, &nu, c).unwrap().tcf, want);
            assert_eq!(estimate_tcf_ipw(&ds, &nu, c, false).unwrap().tcf, want);
            assert_eq!(estimate_tcf_spe(&ds, &nu, c, false).unwrap().tcf, want);
        }
    }

    fn fitted(ds: &Dataset) -> NuisanceEstimates {
        let f = Formula::linear(ds.p());
        estimate_nuisance(ds, &f, &f).unwrap()
    }

    #[test]
    fn nuisance_on_fully_verified_data() {
        let ds = mixed_dataset(120, 1.0, 3);
        let nu = fitted(&ds);
        assert!(nu.pi_hat.iter().all(|&p| p == 1.0));
        assert!(nu.verification_model.is_none());
        for row in &nu.rho_hat {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn misspecified_formulas_are_accepted() {
        let ds = mixed_dataset(300, 0.5, 9);
        let disease: Formula = "t".parse().unwrap();
        let verification: Formula = "t,a1^2/3".parse().unwrap();
        let nu = estimate_nuisance(&ds, &disease, &verification).unwrap();
        assert_eq!(nu.disease_model.as_ref().unwrap().coefficients[0].len(), 2);
        assert_eq!(nu.verification_model.as_ref().unwrap().coefficients.len(), 3);
        assert!(nu.pi_hat.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn positivity_violation_is_reported() {
        let ds = mixed_dataset(40, 0.5, 2);
        let mut nu = oracle_nuisance(&ds);
        let first_verified = ds.verified_indices()[0];
        nu.pi_hat[first_verified] = 1e-5;
        match estimate_tcf_ipw(&ds, &nu, cut(3.0, 5.0), false) {
            Err(Error::Positivity { units, .. }) => assert_eq!(units, vec![first_verified]),
            other => panic!("{other:?}"),
        }
        assert!(estimate_tcf_ipw(&ds, &nu, cut(3.0, 5.0), true).is_ok());
        assert!(estimate_tcf_spe(&ds, &nu, cut(3.0, 5.0), false).is_err());
    }

    #[test]
    fn spe_flags_out_of_range() {
        // the low-propensity class-1 unit carries a negative class-3 weight below c2
        let units = vec![
            Unit::new(0.0, vec![0.0], Some(1)),
            Unit::new(1.0, vec![1.0], Some(2)),
            Unit::new(2.0, vec![0.5], Some(3)),
            Unit::new(2.5, vec![0.2], Some(3)),
        ];
        let ds = Dataset::new(units).unwrap();
        let nu = NuisanceEstimates::from_values(
            vec![[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
            vec![0.5, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let est = estimate_tcf_spe(&ds, &nu, cut(0.5, 1.5), false).unwrap();
        assert!(est.out_of_range);
        assert_eq!(est.tcf[2], 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn parametric_identities(seed in 0u64..100_000, rate in 0.3f64..0.9, c1 in 2.0f64..5.0, w in 0.2f64..3.0, pc in 0.05f64..1.0) {
            let ds = mixed_dataset(60, rate, seed);
            let c = cut(c1, c1 + w);
            let nu = fitted(&ds);

            // nonnegative-weight estimators stay in range
            for tag in [EstimatorTag::Fi, EstimatorTag::Msi, EstimatorTag::Ipw] {
                if let Ok(est) = parametric_weights(&ds, &nu, tag, true).and_then(|w| w.tcf(c)) {
                    prop_assert!(est.tcf.iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }

            // MSI equals FI once the fitted probabilities match the observed labels
            let mut matched = nu.clone();
            for (i, u) in ds.units().iter().enumerate() {
                if u.verified() {
                    matched.rho_hat[i] = u.one_hot();
                }
            }
            if let (Ok(a), Ok(b)) = (estimate_tcf_fi(&ds, &matched, c), estimate_tcf_msi(&ds, &matched, c)) {
                prop_assert_eq!(a.tcf, b.tcf);
            }

            // SPE with unit propensity equals MSI
            let mut unit_pi = nu.clone();
            unit_pi.pi_hat = vec![1.0; ds.n()];
            if let (Ok(a), Ok(b)) = (estimate_tcf_spe(&ds, &unit_pi, c, false), estimate_tcf_msi(&ds, &unit_pi, c)) {
                prop_assert_eq!(a.tcf, b.tcf);
            }

            // IPW with constant propensity equals complete data on the verified subset
            let mut flat = nu.clone();
            flat.pi_hat = vec![pc; ds.n()];
            let verified = ds.resample(&ds.verified_indices());
            if let (Ok(a), Ok(b)) = (estimate_tcf_ipw(&ds, &flat, c, false), complete_data_tcf(&verified, c)) {
                for k in 0..3 {
                    prop_assert!((a.tcf[k] - b.tcf[k]).abs() < 1e-12);
                }
            }
        }
    }
}
