use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rocsurf::bootstrap::bootstrap_covariance;
use rocsurf::data::{self, CutPair, EstimatorTag, TcfEstimate, Unit};
use rocsurf::error::Error;
use rocsurf::estimator::EstimatorSpec;
use rocsurf::neighbors::{self, Metric, MetricKind};
use rocsurf::parametric::Formula;
use rocsurf::simulation::{self, ScenarioIConfig, ScenarioIIConfig};
use rocsurf::surface::{self, GridSpec};
use rocsurf::variance::{self, KnnVariance, DEFAULT_K_BAR};

create_exception!(rocsurf_py, NumericalError, PyArithmeticError);

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Units with test value `t`, covariates `a` and class label `d` (None when unverified).
#[pyclass(name = "Dataset", module = "rocsurf_py", frozen)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(t: Vec<f64>, a: Vec<Vec<f64>>, d: Vec<Option<u8>>) -> PyResult<Self> {
        if t.len() != a.len() || t.len() != d.len() {
            return Err(PyValueError::new_err("t, a and d must have the same length"));
        }
        let units = t
            .into_iter()
            .zip(a)
            .zip(d)
            .map(|((t, a), d)| Unit::new(t, a, d))
            .collect();
        let inner = data::Dataset::new(units).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let inner = data::load_dataset(text.as_bytes()).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    fn to_csv(&self) -> String {
        data::dataset_to_csv(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn n_verified(&self) -> usize {
        self.inner.n_verified()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.t_values()
    }

    #[getter]
    fn d(&self) -> Vec<Option<u8>> {
        self.inner.units().iter().map(|u| u.d).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, p={}, verified={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.n_verified()
        )
    }
}

fn metric(name: &str) -> PyResult<Metric> {
    let kind: MetricKind = name.parse().map_err(to_py)?;
    Ok(Metric::of_kind(kind))
}

fn cut(c1: f64, c2: f64) -> PyResult<CutPair> {
    CutPair::new(c1, c2).map_err(to_py)
}

fn formula(text: Option<&str>, p: usize) -> PyResult<Formula> {
    match text {
        Some(s) => s.parse().map_err(to_py),
        None => Ok(Formula::linear(p)),
    }
}

#[allow(clippy::too_many_arguments)]
fn spec(
    ds: &data::Dataset,
    estimator: &str,
    k: usize,
    metric_name: &str,
    disease_formula: Option<&str>,
    verification_formula: Option<&str>,
    clamp_propensity: bool,
) -> PyResult<EstimatorSpec> {
    let tag = match estimator.to_ascii_lowercase().as_str() {
        "knn" => return Ok(EstimatorSpec::knn(k, metric(metric_name)?)),
        "complete" => return Ok(EstimatorSpec::Complete),
        "fi" => EstimatorTag::Fi,
        "msi" => EstimatorTag::Msi,
        "ipw" => EstimatorTag::Ipw,
        "spe" => EstimatorTag::Spe,
        other => return Err(PyValueError::new_err(format!("unknown estimator `{other}`"))),
    };
    EstimatorSpec::parametric(
        tag,
        formula(disease_formula, ds.p())?,
        formula(verification_formula, ds.p())?,
        clamp_propensity,
    )
    .map_err(to_py)
}

fn estimate_dict<'py>(py: Python<'py>, e: &TcfEstimate, variance: &str) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("tcf", e.tcf)?;
    out.set_item("cut", (e.cut.c1(), e.cut.c2()))?;
    out.set_item("estimator", e.estimator.to_string())?;
    out.set_item("k", e.k)?;
    out.set_item("covariance", e.covariance)?;
    out.set_item("sd", e.sd())?;
    out.set_item("variance", variance)?;
    out.set_item("out_of_range", e.out_of_range)?;
    Ok(out)
}

/// TCF triple at one cut pair. `variance` is "asymptotic" (knn only), "bootstrap" or "none".
#[pyfunction]
#[pyo3(signature = (dataset, c1, c2, estimator="knn", k=1, metric="euclidean", variance="none",
                    disease_formula=None, verification_formula=None, clamp_propensity=false,
                    b=200, seed=0, k_bar=DEFAULT_K_BAR))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    c1: f64,
    c2: f64,
    estimator: &str,
    k: usize,
    metric: &str,
    variance: &str,
    disease_formula: Option<&str>,
    verification_formula: Option<&str>,
    clamp_propensity: bool,
    b: usize,
    seed: u64,
    k_bar: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ds = &dataset.inner;
    let s = spec(ds, estimator, k, metric, disease_formula, verification_formula, clamp_propensity)?;
    let c = cut(c1, c2)?;
    let e = py
        .detach(|| match (variance, &s) {
            ("none", _) => s.estimate(ds, c),
            ("asymptotic", EstimatorSpec::Knn { k, metric }) => KnnVariance::new(ds, *k, metric, k_bar)?.estimate(ds, c),
            ("asymptotic", _) => Err(Error::InvalidInput("asymptotic variance is available for knn only".into())),
            ("bootstrap", _) => {
                let mut e = s.estimate(ds, c)?;
                e.covariance = Some(bootstrap_covariance(ds, &s, c, b, seed)?.covariance);
                Ok(e)
            }
            (other, _) => Err(Error::InvalidInput(format!("unknown variance `{other}`"))),
        })
        .map_err(to_py)?;
    estimate_dict(py, &e, variance)
}

/// `(k_star, criterion)` with the criterion listed for K = 1..=k_max.
#[pyfunction]
#[pyo3(signature = (dataset, k_max, metric="euclidean"))]
fn select_k(py: Python<'_>, dataset: &PyDataset, k_max: usize, metric: &str) -> PyResult<(usize, Vec<f64>)> {
    let m = self::metric(metric)?;
    let sel = py.detach(|| neighbors::select_k(&dataset.inner, &m, k_max)).map_err(to_py)?;
    Ok((sel.k_star, sel.criterion))
}

/// Surface points `(c1, c2, tcf1, tcf2, tcf3)` on a quantile grid of size `m` or at
/// explicit `cuts`.
#[pyfunction]
#[pyo3(signature = (dataset, estimator="knn", k=1, metric="euclidean", m=None, cuts=None,
                    disease_formula=None, verification_formula=None, clamp_propensity=false))]
#[allow(clippy::too_many_arguments)]
fn roc_surface(
    py: Python<'_>,
    dataset: &PyDataset,
    estimator: &str,
    k: usize,
    metric: &str,
    m: Option<usize>,
    cuts: Option<Vec<(f64, f64)>>,
    disease_formula: Option<&str>,
    verification_formula: Option<&str>,
    clamp_propensity: bool,
) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
    let ds = &dataset.inner;
    let s = spec(ds, estimator, k, metric, disease_formula, verification_formula, clamp_propensity)?;
    let grid = match (m, cuts) {
        (Some(m), None) => GridSpec::Quantile(m),
        (None, Some(pairs)) => GridSpec::Explicit(pairs.into_iter().map(|(a, b)| cut(a, b)).collect::<PyResult<_>>()?),
        _ => return Err(PyValueError::new_err("pass exactly one of m and cuts")),
    };
    let g = py.detach(|| surface::roc_surface(ds, &s, &grid)).map_err(to_py)?;
    Ok(g.points
        .iter()
        .map(|p| (p.cut.c1(), p.cut.c2(), p.tcf[0], p.tcf[1], p.tcf[2]))
        .collect())
}

/// Confidence ellipsoid of the KNN triple from the plug-in covariance.
#[pyfunction]
#[pyo3(signature = (dataset, c1, c2, k=1, level=0.95, metric="euclidean", k_bar=DEFAULT_K_BAR))]
#[allow(clippy::too_many_arguments)]
fn ellipsoid<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    c1: f64,
    c2: f64,
    k: usize,
    level: f64,
    metric: &str,
    k_bar: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ds = &dataset.inner;
    let m = self::metric(metric)?;
    let c = cut(c1, c2)?;
    let e = py
        .detach(|| {
            let est = variance::estimate_tcf_knn_with_variance(ds, k, &m, c, k_bar)?;
            variance::confidence_ellipsoid(&est, level)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("center", e.center)?;
    out.set_item("cholesky", e.cholesky)?;
    out.set_item("radius2", e.radius2)?;
    out.set_item("level", e.level)?;
    Ok(out)
}

#[pyfunction]
fn generate_scenario_i(sigma_choice: usize, n: usize, seed: u64) -> PyResult<PyDataset> {
    let cfg = ScenarioIConfig::new(sigma_choice, n, seed).map_err(to_py)?;
    let inner = simulation::generate_scenario_i(&cfg).map_err(to_py)?;
    Ok(PyDataset { inner })
}

#[pyfunction]
#[pyo3(signature = (n, seed, alpha=0.5))]
fn generate_scenario_ii(n: usize, seed: u64, alpha: f64) -> PyResult<PyDataset> {
    let cfg = ScenarioIIConfig::new(alpha, n, seed).map_err(to_py)?;
    let inner = simulation::generate_scenario_ii(&cfg).map_err(to_py)?;
    Ok(PyDataset { inner })
}

#[pyfunction]
fn true_tcf_scenario_i(sigma_choice: usize, c1: f64, c2: f64) -> PyResult<[f64; 3]> {
    let sigma = simulation::sigma_choice(sigma_choice).map_err(to_py)?;
    Ok(simulation::true_tcf_scenario_i(&sigma, cut(c1, c2)?).tcf)
}

#[pyfunction]
#[pyo3(signature = (c1, c2, alpha=0.5))]
fn true_tcf_scenario_ii(c1: f64, c2: f64, alpha: f64) -> PyResult<[f64; 3]> {
    let cfg = ScenarioIIConfig::new(alpha, 1, 0).map_err(to_py)?;
    Ok(simulation::true_tcf_scenario_ii(&cfg, cut(c1, c2)?).tcf)
}

#[pyfunction]
fn true_vus_scenario_i(sigma_choice: usize) -> PyResult<f64> {
    let sigma = simulation::sigma_choice(sigma_choice).map_err(to_py)?;
    Ok(simulation::true_vus_scenario_i(&sigma))
}

#[pyfunction]
#[pyo3(signature = (dataset, tie_weights=false))]
fn complete_data_vus(dataset: &PyDataset, tie_weights: bool) -> PyResult<f64> {
    simulation::complete_data_vus(&dataset.inner, tie_weights).map_err(to_py)
}

/// Runs a Monte Carlo study from config text and returns the summary as CSV text.
#[pyfunction]
fn simulate(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = simulation::parse_config(config).map_err(to_py)?;
    let table = py.detach(|| simulation::run_monte_carlo(&cfg)).map_err(to_py)?;
    let mut buf = Vec::new();
    simulation::write_table(&table, &mut buf).map_err(to_py)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

#[pyfunction]
fn subsample(dataset: &PyDataset, rule: &str, seed: u64) -> PyResult<PyDataset> {
    let rule = data::SelectionRule::parse(rule).map_err(to_py)?;
    let inner = data::subsample_verification(&dataset.inner, &rule, seed).map_err(to_py)?;
    Ok(PyDataset { inner })
}

#[pymodule]
fn rocsurf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(select_k, m)?)?;
    m.add_function(wrap_pyfunction!(roc_surface, m)?)?;
    m.add_function(wrap_pyfunction!(ellipsoid, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario_i, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario_ii, m)?)?;
    m.add_function(wrap_pyfunction!(true_tcf_scenario_i, m)?)?;
    m.add_function(wrap_pyfunction!(true_tcf_scenario_ii, m)?)?;
    m.add_function(wrap_pyfunction!(true_vus_scenario_i, m)?)?;
    m.add_function(wrap_pyfunction!(complete_data_vus, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(subsample, m)?)?;
    Ok(())
}
