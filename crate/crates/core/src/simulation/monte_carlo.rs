//! Repeated-sampling harness: per estimator and cut pair, the Monte Carlo mean and sd,
//! the root-mean-square estimated sd, and the share of estimates outside `[0, 1]`.
//!
//! Configuration is a flat `key = value` file; `#` starts a comment. Keys:
//! `scenario` (`i` or `ii`), `n`, `reps`, `seed`, `sigma_choice` (1..=3), `alpha`,
//! `cuts` (`c1,c2; c1,c2; ...`), `estimators` (subset of `fi,msi,ipw,spe,knn`),
//! `k` (list, one KNN row each), `metric`, `k_bar`, and `bootstrap_b` (replicates
//! behind the estimated sd of the parametric estimators; 0 leaves it blank).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    generate_scenario_i_with, generate_scenario_ii_with, sigma_choice, true_tcf_scenario_i, true_tcf_scenario_ii,
    ScenarioIConfig, ScenarioIIConfig,
};
use crate::bootstrap::bootstrap_cuts;
use crate::data::{CutPair, Dataset, EstimatorTag};
use crate::error::{Error, Result};
use crate::estimator::EstimatorSpec;
use crate::knn::knn_weights;
use crate::neighbors::{Metric, MetricKind};
use crate::parametric::{estimate_nuisance, parametric_weights, Formula};
use crate::variance::{plugin_rho_pi, KnnVariance, DEFAULT_K_BAR};

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    I { sigma_choice: usize },
    II { alpha: f64 },
}

#[derive(Clone, Debug)]
pub struct McConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub cuts: Vec<CutPair>,
    /// Parametric estimators in output order; KNN rows follow.
    pub parametric: Vec<EstimatorTag>,
    pub knn_k: Vec<usize>,
    pub metric: Metric,
    pub k_bar: usize,
    pub bootstrap_b: usize,
}

fn default_cuts(scenario: &Scenario) -> Vec<CutPair> {
    let pairs: [(f64, f64); 6] = match scenario {
        Scenario::I { .. } => [(2.0, 4.0), (2.0, 5.0), (2.0, 7.0), (4.0, 5.0), (4.0, 7.0), (5.0, 7.0)],
        Scenario::II { .. } => [(-1.0, -0.5), (-1.0, 0.7), (-1.0, 1.3), (-0.5, 0.7), (-0.5, 1.3), (0.7, 1.3)],
    };
    pairs.iter().map(|&(a, b)| CutPair::new(a, b).expect("valid default cut")).collect()
}

impl McConfig {
    pub fn scenario_i(sigma_choice: usize, n: usize, reps: usize, seed: u64) -> Self {
        let scenario = Scenario::I { sigma_choice };
        McConfig {
            cuts: default_cuts(&scenario),
            scenario,
            n,
            reps,
            seed,
            parametric: vec![EstimatorTag::Fi, EstimatorTag::Msi, EstimatorTag::Ipw, EstimatorTag::Spe],
            knn_k: vec![1, 3],
            metric: Metric::euclidean(),
            k_bar: DEFAULT_K_BAR,
            bootstrap_b: 0,
        }
    }

    pub fn scenario_ii(alpha: f64, n: usize, reps: usize, seed: u64) -> Self {
        let scenario = Scenario::II { alpha };
        McConfig {
            cuts: default_cuts(&scenario),
            scenario,
            ..Self::scenario_i(1, n, reps, seed)
        }
    }

    /// Working models: correct in scenario I, deliberately misspecified in scenario II.
    pub fn formulas(&self) -> (Formula, Formula) {
        let parse = |s: &str| s.parse::<Formula>().expect("fixed formula is well formed");
        match self.scenario {
            Scenario::I { .. } => (parse("t,a1"), parse("t,a1")),
            Scenario::II { .. } => (parse("t"), parse("t,a1^2/3")),
        }
    }

    fn generate(&self, rep: usize) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        match self.scenario {
            Scenario::I { sigma_choice } => {
                generate_scenario_i_with(&ScenarioIConfig::new(sigma_choice, self.n, self.seed)?, &mut rng)
            }
            Scenario::II { alpha } => generate_scenario_ii_with(&ScenarioIIConfig::new(alpha, self.n, self.seed)?, &mut rng),
        }
    }

    fn truth(&self, cut: CutPair) -> Result<[f64; 3]> {
        Ok(match self.scenario {
            Scenario::I { sigma_choice: s } => true_tcf_scenario_i(&sigma_choice(s)?, cut).tcf,
            Scenario::II { alpha } => true_tcf_scenario_ii(&ScenarioIIConfig::new(alpha, self.n, self.seed)?, cut).tcf,
        })
    }

    fn labels(&self) -> Vec<String> {
        self.parametric
            .iter()
            .map(|t| t.to_string())
            .chain(self.knn_k.iter().map(|k| format!("{k}NN")))
            .collect()
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::InvalidInput(format!("bad entry `{s}` for `{key}`"))))
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad value `{value}` for `{key}`")))
}

pub fn parse_cuts(value: &str) -> Result<Vec<CutPair>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let v: Vec<f64> = parse_list("cuts", pair)?;
            match v.as_slice() {
                [a, b] => CutPair::new(*a, *b),
                _ => Err(Error::InvalidInput(format!("cut pair `{pair}` needs two values"))),
            }
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<McConfig> {
    let mut entries = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("line {}: expected `key = value`", line_no + 1)))?;
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    let get = |key: &str| entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    for (key, _) in &entries {
        const KNOWN: [&str; 12] = [
            "scenario", "n", "reps", "seed", "sigma_choice", "alpha", "cuts", "estimators", "k", "metric", "k_bar",
            "bootstrap_b",
        ];
        if !KNOWN.contains(&key.as_str()) {
            return Err(Error::InvalidInput(format!("unknown config key `{key}`")));
        }
    }

    let n = get("n").map(|v| parse_scalar("n", v)).transpose()?.unwrap_or(250);
    let reps = get("reps").map(|v| parse_scalar("reps", v)).transpose()?.unwrap_or(500);
    let seed = get("seed").map(|v| parse_scalar("seed", v)).transpose()?.unwrap_or(1);
    let mut cfg = match get("scenario").unwrap_or("i").to_ascii_lowercase().as_str() {
        "i" | "1" => {
            let s = get("sigma_choice").map(|v| parse_scalar("sigma_choice", v)).transpose()?.unwrap_or(1);
            sigma_choice(s)?;
            McConfig::scenario_i(s, n, reps, seed)
        }
        "ii" | "2" => {
            let alpha = get("alpha").map(|v| parse_scalar("alpha", v)).transpose()?.unwrap_or(0.5);
            McConfig::scenario_ii(alpha, n, reps, seed)
        }
        other => return Err(Error::InvalidInput(format!("unknown scenario `{other}`"))),
    };
    if let Some(v) = get("cuts") {
        cfg.cuts = parse_cuts(v)?;
    }
    if let Some(v) = get("k") {
        cfg.knn_k = parse_list("k", v)?;
    }
    if let Some(v) = get("estimators") {
        let names: Vec<String> = parse_list("estimators", v)?;
        let mut parametric = Vec::new();
        let mut knn = false;
        for name in names {
            match name.to_ascii_lowercase().as_str() {
                "fi" => parametric.push(EstimatorTag::Fi),
                "msi" => parametric.push(EstimatorTag::Msi),
                "ipw" => parametric.push(EstimatorTag::Ipw),
                "spe" => parametric.push(EstimatorTag::Spe),
                "knn" => knn = true,
                other => return Err(Error::InvalidInput(format!("unknown estimator `{other}`"))),
            }
        }
        cfg.parametric = parametric;
        if !knn {
            cfg.knn_k.clear();
        }
    }
    if let Some(v) = get("metric") {
        cfg.metric = Metric::of_kind(parse_scalar::<MetricKind>("metric", v)?);
    }
    if let Some(v) = get("k_bar") {
        cfg.k_bar = parse_scalar("k_bar", v)?;
    }
    if let Some(v) = get("bootstrap_b") {
        cfg.bootstrap_b = parse_scalar("bootstrap_b", v)?;
    }
    if cfg.n == 0 || cfg.reps == 0 || cfg.cuts.is_empty() || cfg.knn_k.contains(&0) {
        return Err(Error::InvalidInput("n, reps, cuts and k must be nonempty and positive".into()));
    }
    Ok(cfg)
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    tcf: [f64; 3],
    sd: Option<[f64; 3]>,
}

/// `cells[estimator][cut]`, `None` when the estimator failed on this replication.
type RepResult = Vec<Vec<Option<Cell>>>;

fn run_one(cfg: &McConfig, rep: usize) -> RepResult {
    let n_rows = cfg.parametric.len() + cfg.knn_k.len();
    let failed = || vec![None; cfg.cuts.len()];
    let ds = match cfg.generate(rep) {
        Ok(ds) => ds,
        Err(_) => return vec![failed(); n_rows],
    };
    let mut out = Vec::with_capacity(n_rows);

    if !cfg.parametric.is_empty() {
        let (disease, verification) = cfg.formulas();
        let nuisance = estimate_nuisance(&ds, &disease, &verification);
        for &tag in &cfg.parametric {
            let weights = nuisance.as_ref().ok().and_then(|nu| parametric_weights(&ds, nu, tag, false).ok());
            let Some(weights) = weights else {
                out.push(failed());
                continue;
            };
            let boot = if cfg.bootstrap_b >= 2 {
                let spec = EstimatorSpec::parametric(tag, disease.clone(), verification.clone(), false)
                    .expect("parametric tag");
                // stream 0 of a per-replication seed keeps the bootstrap draws distinct from the data draws
                bootstrap_cuts(&ds, &spec, &cfg.cuts, cfg.bootstrap_b, cfg.seed ^ ((rep as u64 + 1) << 20)).ok()
            } else {
                None
            };
            out.push(
                cfg.cuts
                    .iter()
                    .enumerate()
                    .map(|(c, &cut)| {
                        let tcf = weights.tcf(cut).ok()?.tcf;
                        let sd = boot
                            .as_ref()
                            .and_then(|b| b[c].as_ref().ok())
                            .map(|r| r.sd());
                        Some(Cell { tcf, sd })
                    })
                    .collect(),
            );
        }
    }

    let plugin = if cfg.knn_k.is_empty() {
        None
    } else {
        plugin_rho_pi(&ds, &cfg.metric, cfg.k_bar).ok()
    };
    for &k in &cfg.knn_k {
        let Ok(weights) = knn_weights(&ds, k, &cfg.metric) else {
            out.push(failed());
            continue;
        };
        let engine = plugin
            .as_ref()
            .map(|(rho, pi)| KnnVariance::from_parts(&ds, weights.clone(), rho.clone(), pi.clone(), k, cfg.k_bar));
        out.push(
            cfg.cuts
                .iter()
                .map(|&cut| {
                    let tcf = weights.tcf(cut).ok()?.tcf;
                    let sd = engine
                        .as_ref()
                        .and_then(|e| e.estimate(&ds, cut).ok())
                        .and_then(|est| est.sd());
                    Some(Cell { tcf, sd })
                })
                .collect(),
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub cut: CutPair,
    /// Monte Carlo mean, or the true value on a `True` row.
    pub tcf: [f64; 3],
    /// Absent with fewer than two successful replications.
    pub mc_sd: Option<[f64; 3]>,
    /// Root of the mean per-replication estimated variance.
    pub est_sd: Option<[f64; 3]>,
    /// `asymptotic` for KNN rows, `bootstrap` for parametric rows.
    pub sd_kind: Option<&'static str>,
    /// Share of replications with the component outside `[0, 1]`.
    pub out_of_range: Option<[f64; 3]>,
    pub reps_used: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

impl SummaryTable {
    pub fn row(&self, label: &str, cut: CutPair) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label && r.cut == cut)
    }
}

fn mean3(rows: &[[f64; 3]]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            m[k] += r[k];
        }
    }
    m.map(|s| s / rows.len() as f64)
}

fn summarize(label: String, cut: CutPair, cells: &[Option<Cell>], sd_kind: &'static str) -> SummaryRow {
    let ok: Vec<Cell> = cells.iter().flatten().copied().collect();
    let tcfs: Vec<[f64; 3]> = ok.iter().map(|c| c.tcf).collect();
    let used = tcfs.len();
    let tcf = if used == 0 { [f64::NAN; 3] } else { mean3(&tcfs) };
    let mc_sd = (used >= 2).then(|| {
        [0, 1, 2].map(|k| {
            let ss: f64 = tcfs.iter().map(|r| (r[k] - tcf[k]).powi(2)).sum();
            (ss / (used - 1) as f64).sqrt()
        })
    });
    let sds: Vec<[f64; 3]> = ok.iter().filter_map(|c| c.sd).collect();
    let variances: Vec<[f64; 3]> = sds.iter().map(|s| s.map(|x| x * x)).collect();
    let est_sd = (!sds.is_empty()).then(|| mean3(&variances).map(f64::sqrt));
    let out_of_range = (used > 0).then(|| {
        [0, 1, 2].map(|k| tcfs.iter().filter(|r| !(0.0..=1.0).contains(&r[k])).count() as f64 / used as f64)
    });
    SummaryRow {
        label,
        cut,
        tcf,
        mc_sd,
        est_sd,
        sd_kind: est_sd.map(|_| sd_kind),
        out_of_range,
        reps_used: used,
        failures: cells.len() - used,
    }
}

/// Replications run in parallel on independent streams; the summary depends only on
/// the configuration.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<SummaryTable> {
    if cfg.reps == 0 {
        return Err(Error::InvalidInput("reps must be positive".into()));
    }
    let results: Vec<RepResult> = (0..cfg.reps).into_par_iter().map(|r| run_one(cfg, r)).collect();
    let labels = cfg.labels();
    let mut rows = Vec::new();
    for (c, &cut) in cfg.cuts.iter().enumerate() {
        rows.push(SummaryRow {
            label: "True".into(),
            cut,
            tcf: cfg.truth(cut)?,
            mc_sd: None,
            est_sd: None,
            sd_kind: None,
            out_of_range: None,
            reps_used: 0,
            failures: 0,
        });
        for (e, label) in labels.iter().enumerate() {
            let cells: Vec<Option<Cell>> = results.iter().map(|r| r[e][c]).collect();
            let kind = if e < cfg.parametric.len() { "bootstrap" } else { "asymptotic" };
            rows.push(summarize(label.clone(), cut, &cells, kind));
        }
    }
    Ok(SummaryTable {
        rows,
        n: cfg.n,
        reps: cfg.reps,
        seed: cfg.seed,
    })
}

/// Four-decimal CSV in the layout of the published tables, one row per estimator and cut.
pub fn write_table<W: Write>(table: &SummaryTable, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "c1", "c2", "estimator", "tcf1", "tcf2", "tcf3", "mc_sd1", "mc_sd2", "mc_sd3", "est_sd1", "est_sd2", "est_sd3",
        "sd_kind", "out_of_range1", "out_of_range2", "out_of_range3", "reps_used", "failures",
    ])?;
    let fmt3 = |v: Option<[f64; 3]>| -> [String; 3] {
        match v {
            Some(x) => x.map(|x| format!("{x:.4}")),
            None => Default::default(),
        }
    };
    for r in &table.rows {
        let mut rec = vec![r.cut.c1().to_string(), r.cut.c2().to_string(), r.label.clone()];
        rec.extend(fmt3(Some(r.tcf)));
        rec.extend(fmt3(r.mc_sd));
        rec.extend(fmt3(r.est_sd));
        rec.push(r.sd_kind.unwrap_or("").to_string());
        rec.extend(fmt3(r.out_of_range));
        let truth = r.label == "True";
        rec.push(if truth { String::new() } else { r.reps_used.to_string() });
        rec.push(if truth { String::new() } else { r.failures.to_string() });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
