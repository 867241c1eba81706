//! Command-line front end. Every command is a pure function of its input bytes, flags
//! and seed; results go to stdout as JSON (`"schema": 1`) or to `--out` files, which
//! are written to a temporary sibling and renamed into place.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::bootstrap::bootstrap_covariance;
use crate::data::{load_dataset, validate, write_dataset, CutPair, Dataset, EstimatorTag, SelectionRule, TcfEstimate};
use crate::error::{Error, Result};
use crate::estimator::EstimatorSpec;
use crate::neighbors::{select_k, Metric, MetricKind};
use crate::parametric::Formula;
use crate::simulation::{parse_config, run_monte_carlo, write_table};
use crate::surface::{roc_surface, GridSpec};
use crate::variance::{confidence_ellipsoid, KnnVariance, DEFAULT_K_BAR};

pub const SCHEMA: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "rocsurf", version, about = "ROC surface estimation under verification bias")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// TCF triple at one cut pair, with optional covariance.
    Estimate(EstimateArgs),
    /// TCF triples over a grid of cut pairs, written as CSV.
    Surface(SurfaceArgs),
    /// Leave-one-out choice of the neighbourhood size.
    SelectK(SelectKArgs),
    /// Confidence ellipsoid for the KNN TCF triple.
    Ellipsoid(EllipsoidArgs),
    /// Monte Carlo study from a config file.
    Simulate(SimulateArgs),
    /// Drop disease labels according to a selection rule.
    Subsample(SubsampleArgs),
    /// Summary of the dataset and warnings for a cut pair.
    Validate(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Knn,
    Fi,
    Msi,
    Ipw,
    Spe,
    Complete,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Euclidean,
    Manhattan,
    Canberra,
    Mahalanobis,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => MetricKind::Euclidean,
            MetricArg::Manhattan => MetricKind::Manhattan,
            MetricArg::Canberra => MetricKind::Canberra,
            MetricArg::Mahalanobis => MetricKind::Mahalanobis,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VarianceArg {
    Asymptotic,
    Bootstrap,
    None,
}

#[derive(Args, Debug)]
struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "knn")]
    estimator: EstimatorArg,
    /// Neighbourhood size for knn.
    #[arg(long, conflicts_with = "select_k")]
    k: Option<usize>,
    /// Choose K by leave-one-out before estimating.
    #[arg(long)]
    select_k: bool,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    /// Working disease model, e.g. `t,a1`. Defaults to all covariates linearly.
    #[arg(long)]
    disease_formula: Option<String>,
    /// Working verification model. Defaults to all covariates linearly.
    #[arg(long)]
    verification_formula: Option<String>,
    #[arg(long)]
    clamp_propensity: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// `c1,c2`
    #[arg(long)]
    cut: String,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Defaults to asymptotic for knn and none otherwise.
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
    #[arg(long, default_value_t = 200)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Neighbourhood size of the nuisance estimates inside the plug-in variance.
    #[arg(long, default_value_t = DEFAULT_K_BAR)]
    k_bar: usize,
}

#[derive(Args, Debug)]
struct SurfaceArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// `quantile:m` or `file:cuts.csv` (columns c1,c2).
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelectKArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    /// Defaults to min(10, verified - 1).
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args, Debug)]
struct EllipsoidArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cut: String,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
    #[arg(long, default_value_t = 200)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_K_BAR)]
    k_bar: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SubsampleArgs {
    #[arg(long)]
    input: PathBuf,
    /// e.g. `0.05 + 0.35*I(t>0.87) + 0.25*I(a1>0.30)`
    #[arg(long)]
    rule: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cut: String,
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    load_dataset(BufReader::new(file))
}

/// Writes through a temporary file in the target directory, so a failure leaves
/// no partial output behind.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_cut(text: &str) -> Result<CutPair> {
    let bad = || Error::InvalidInput(format!("cut must be `c1,c2`, got `{text}`"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    CutPair::new(a, b)
}

fn read_cut_file(path: &Path) -> Result<Vec<CutPair>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut cuts = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: "expected numeric c1,c2".into(),
                })
        };
        cuts.push(CutPair::new(field(0)?, field(1)?)?);
    }
    Ok(cuts)
}

fn default_k_max(ds: &Dataset) -> Result<usize> {
    let n_ver = ds.n_verified();
    if n_ver < 2 {
        return Err(Error::InsufficientData(format!(
            "selecting K needs at least 2 verified units, found {n_ver}"
        )));
    }
    Ok(10.min(n_ver - 1))
}

/// The estimator plus whether K was chosen by leave-one-out.
fn build_estimator(ds: &Dataset, args: &EstimatorArgs) -> Result<(EstimatorSpec, bool)> {
    let metric = Metric::of_kind(args.metric.into());
    let formula = |f: &Option<String>| -> Result<Formula> {
        match f {
            Some(s) => s.parse(),
            None => Ok(Formula::linear(ds.p())),
        }
    };
    let tag = match args.estimator {
        EstimatorArg::Complete => return Ok((EstimatorSpec::Complete, false)),
        EstimatorArg::Knn => {
            let (k, selected) = if args.select_k {
                (select_k(ds, &metric, default_k_max(ds)?)?.k_star, true)
            } else {
                (args.k.unwrap_or(1), false)
            };
            return Ok((EstimatorSpec::knn(k, metric), selected));
        }
        EstimatorArg::Fi => EstimatorTag::Fi,
        EstimatorArg::Msi => EstimatorTag::Msi,
        EstimatorArg::Ipw => EstimatorTag::Ipw,
        EstimatorArg::Spe => EstimatorTag::Spe,
    };
    let spec = EstimatorSpec::parametric(
        tag,
        formula(&args.disease_formula)?,
        formula(&args.verification_formula)?,
        args.clamp_propensity,
    )?;
    Ok((spec, false))
}

struct VarianceRun {
    estimate: TcfEstimate,
    method: &'static str,
    bootstrap_failures: Option<usize>,
}

fn estimate_with_variance(
    ds: &Dataset,
    spec: &EstimatorSpec,
    cut: CutPair,
    variance: VarianceArg,
    b: usize,
    seed: u64,
    k_bar: usize,
) -> Result<VarianceRun> {
    match variance {
        VarianceArg::None => Ok(VarianceRun {
            estimate: spec.estimate(ds, cut)?,
            method: "none",
            bootstrap_failures: None,
        }),
        VarianceArg::Asymptotic => match spec {
            EstimatorSpec::Knn { k, metric } => Ok(VarianceRun {
                estimate: KnnVariance::new(ds, *k, metric, k_bar)?.estimate(ds, cut)?,
                method: "asymptotic",
                bootstrap_failures: None,
            }),
            other => Err(Error::InvalidInput(format!(
                "asymptotic variance is available for knn only, not {other}; use --variance bootstrap"
            ))),
        },
        VarianceArg::Bootstrap => {
            let mut estimate = spec.estimate(ds, cut)?;
            let boot = bootstrap_covariance(ds, spec, cut, b, seed)?;
            estimate.covariance = Some(boot.covariance);
            Ok(VarianceRun {
                estimate,
                method: "bootstrap",
                bootstrap_failures: Some(boot.failures),
            })
        }
    }
}

fn default_variance(spec: &EstimatorSpec) -> VarianceArg {
    match spec {
        EstimatorSpec::Knn { .. } => VarianceArg::Asymptotic,
        _ => VarianceArg::None,
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Value> {
    let ds = read_dataset(&a.input)?;
    let cut = parse_cut(&a.cut)?;
    let (spec, selected) = build_estimator(&ds, &a.estimator)?;
    let variance = a.variance.unwrap_or_else(|| default_variance(&spec));
    let run = estimate_with_variance(&ds, &spec, cut, variance, a.b, a.seed, a.k_bar)?;
    let e = &run.estimate;
    Ok(json!({
        "schema": SCHEMA,
        "command": "estimate",
        "estimator": spec.to_string(),
        "k": e.k,
        "k_selected": selected,
        "cut": [cut.c1(), cut.c2()],
        "tcf": e.tcf,
        "covariance": e.covariance,
        "sd": e.sd(),
        "variance": run.method,
        "bootstrap": run.bootstrap_failures.map(|f| json!({"b": a.b, "seed": a.seed, "failures": f})),
        "out_of_range": e.out_of_range,
        "warnings": validate(&ds, cut).warnings,
    }))
}

fn cmd_surface(a: &SurfaceArgs) -> Result<Value> {
    let ds = read_dataset(&a.input)?;
    let grid = match a.grid.strip_prefix("file:") {
        Some(path) => GridSpec::Explicit(read_cut_file(Path::new(path))?),
        None => a.grid.parse()?,
    };
    let (spec, _) = build_estimator(&ds, &a.estimator)?;
    let surface = roc_surface(&ds, &spec, &grid)?;
    write_atomic(&a.out, |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["c1", "c2", "tcf1", "tcf2", "tcf3"])?;
        for p in &surface.points {
            let vals = [p.cut.c1(), p.cut.c2(), p.tcf[0], p.tcf[1], p.tcf[2]];
            w.write_record(vals.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "surface",
        "estimator": spec.to_string(),
        "out": a.out.display().to_string(),
        "pairs": surface.cut_pairs.len(),
        "points": surface.points.len(),
        "duplicates": surface.duplicates,
        "monotone_envelope": surface.monotone_envelope,
        "notes": surface.notes,
    }))
}

fn cmd_select_k(a: &SelectKArgs) -> Result<Value> {
    let ds = read_dataset(&a.input)?;
    let k_max = match a.k_max {
        Some(k) => k,
        None => default_k_max(&ds)?,
    };
    let sel = select_k(&ds, &Metric::of_kind(a.metric.into()), k_max)?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "select-k",
        "k_star": sel.k_star,
        "k_max": k_max,
        "criterion": sel.criterion,
    }))
}

fn cmd_ellipsoid(a: &EllipsoidArgs) -> Result<Value> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {}", a.level)));
    }
    let ds = read_dataset(&a.input)?;
    let cut = parse_cut(&a.cut)?;
    let (spec, _) = build_estimator(&ds, &a.estimator)?;
    let variance = match a.variance.unwrap_or_else(|| default_variance(&spec)) {
        VarianceArg::None => return Err(Error::InvalidInput("an ellipsoid needs a covariance".into())),
        v => v,
    };
    let run = estimate_with_variance(&ds, &spec, cut, variance, a.b, a.seed, a.k_bar)?;
    let e = confidence_ellipsoid(&run.estimate, a.level)?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "ellipsoid",
        "estimator": spec.to_string(),
        "cut": [cut.c1(), cut.c2()],
        "variance": run.method,
        "center": e.center,
        "cholesky": e.cholesky,
        "radius2": e.radius2,
        "level": e.level,
    }))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Value> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", a.config.display())))?;
    let cfg = parse_config(&text)?;
    let table = run_monte_carlo(&cfg)?;
    write_atomic(&a.out, |f| write_table(&table, f))?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "simulate",
        "out": a.out.display().to_string(),
        "rows": table.rows.len(),
        "n": table.n,
        "reps": table.reps,
        "seed": table.seed,
    }))
}

fn cmd_subsample(a: &SubsampleArgs) -> Result<Value> {
    let ds = read_dataset(&a.input)?;
    let rule = SelectionRule::parse(&a.rule)?;
    let sub = crate::data::subsample_verification(&ds, &rule, a.seed)?;
    write_atomic(&a.out, |f| write_dataset(&sub, f))?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "subsample",
        "out": a.out.display().to_string(),
        "n": sub.n(),
        "n_verified": sub.n_verified(),
        "verification_rate": sub.n_verified() as f64 / sub.n() as f64,
    }))
}

fn cmd_validate(a: &ValidateArgs) -> Result<Value> {
    let ds = read_dataset(&a.input)?;
    let report = validate(&ds, parse_cut(&a.cut)?);
    Ok(json!({
        "schema": SCHEMA,
        "command": "validate",
        "report": report,
    }))
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::InvalidInput(_) => "invalid_input",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InsufficientData(_) => "insufficient_data",
        Error::EmptyClass { .. } => "empty_class",
        Error::NotPositiveDefinite(_) => "not_positive_definite",
        Error::Positivity { .. } => "positivity",
        Error::NegativeVariance(_) => "negative_variance",
        Error::Numerical(_) => "numerical",
        Error::TooManyFailures { .. } => "too_many_failures",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
    }
}

fn emit_error(err: &mut dyn Write, kind: &str, message: &str) {
    let body = json!({"schema": SCHEMA, "error": {"kind": kind, "message": message}});
    let _ = writeln!(err, "{body}");
}

/// Runs one invocation. Exit codes: 0 success, 1 invalid input, 2 numerical failure.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            emit_error(err, "usage", e.to_string().trim_end());
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Surface(a) => cmd_surface(a),
        Command::SelectK(a) => cmd_select_k(a),
        Command::Ellipsoid(a) => cmd_ellipsoid(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Subsample(a) => cmd_subsample(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(v) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json value serializes"));
            0
        }
        Err(e) => {
            emit_error(err, error_kind(&e), &e.to_string());
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
