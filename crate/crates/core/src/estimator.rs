//! A single description of "which estimator, with which tuning" shared by the
//! bootstrap, the surface grid, the Monte Carlo harness and the CLI.

use std::fmt;

use crate::data::{CutPair, Dataset, EstimatorTag, TcfEstimate};
use crate::error::{Error, Result};
use crate::knn::{complete_weights, knn_weights};
use crate::neighbors::Metric;
use crate::parametric::{estimate_nuisance, parametric_weights, Formula};
use crate::weighted::UnitWeights;

#[derive(Clone, Debug)]
pub enum EstimatorSpec {
    Complete,
    Knn {
        k: usize,
        metric: Metric,
    },
    /// One of FI, MSI, IPW, SPE with its working models.
    Parametric {
        tag: EstimatorTag,
        disease: Formula,
        verification: Formula,
        clamp: bool,
    },
}

impl EstimatorSpec {
    pub fn knn(k: usize, metric: Metric) -> Self {
        EstimatorSpec::Knn { k, metric }
    }

    pub fn parametric(tag: EstimatorTag, disease: Formula, verification: Formula, clamp: bool) -> Result<Self> {
        match tag {
            EstimatorTag::Fi | EstimatorTag::Msi | EstimatorTag::Ipw | EstimatorTag::Spe => Ok(EstimatorSpec::Parametric {
                tag,
                disease,
                verification,
                clamp,
            }),
            other => Err(Error::InvalidInput(format!("{other} is not a parametric estimator"))),
        }
    }

    pub fn tag(&self) -> EstimatorTag {
        match self {
            EstimatorSpec::Complete => EstimatorTag::Complete,
            EstimatorSpec::Knn { .. } => EstimatorTag::Knn,
            EstimatorSpec::Parametric { tag, .. } => *tag,
        }
    }

    /// Per-unit weights; fitting and imputation happen here, once per dataset.
    pub fn weights(&self, dataset: &Dataset) -> Result<UnitWeights> {
        match self {
            EstimatorSpec::Complete => complete_weights(dataset),
            EstimatorSpec::Knn { k, metric } => knn_weights(dataset, *k, metric),
            EstimatorSpec::Parametric {
                tag,
                disease,
                verification,
                clamp,
            } => {
                let nuisance = estimate_nuisance(dataset, disease, verification)?;
                parametric_weights(dataset, &nuisance, *tag, *clamp)
            }
        }
    }

    pub fn estimate(&self, dataset: &Dataset, cut: CutPair) -> Result<TcfEstimate> {
        self.weights(dataset)?.tcf(cut)
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Knn { k, .. } => write!(f, "{k}NN"),
            other => write!(f, "{}", other.tag()),
        }
    }
}
