//! Dataset representation, CSV ingestion and serialization, validation reports,
//! and verification subsampling.
//!
//! The CSV schema is `t,a1,...,ap,v,d` with a mandatory header. The label cell `d`
//! is empty exactly where `v = 0`.

use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// One study subject: test result, covariates, and (when verified) the disease class.
#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub t: f64,
    pub a: Vec<f64>,
    /// Disease class in `1..=3`; `None` when the unit was not verified.
    pub d: Option<u8>,
}

impl Unit {
    pub fn new(t: f64, a: Vec<f64>, d: Option<u8>) -> Self {
        Unit { t, a, d }
    }

    #[inline]
    pub fn verified(&self) -> bool {
        self.d.is_some()
    }

    /// Zero-based class index, when verified.
    #[inline]
    pub fn class_index(&self) -> Option<usize> {
        self.d.map(|d| d as usize - 1)
    }

    /// One-hot encoding of the label, all zeros when unverified.
    pub fn one_hot(&self) -> [f64; NUM_CLASSES] {
        let mut row = [0.0; NUM_CLASSES];
        if let Some(k) = self.class_index() {
            row[k] = 1.0;
        }
        row
    }
}

/// An immutable collection of units sharing a covariate dimension `p >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    units: Vec<Unit>,
    p: usize,
}

impl Dataset {
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        let first = units
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset has no units".into()))?;
        let p = first.a.len();
        if p == 0 {
            return Err(Error::InvalidInput(
                "at least one covariate column is required".into(),
            ));
        }
        for (i, u) in units.iter().enumerate() {
            if u.a.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: u.a.len(),
                });
            }
            if !u.t.is_finite() || u.a.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("unit {i} has a non-finite value")));
            }
            if let Some(d) = u.d {
                if !(1..=3).contains(&d) {
                    return Err(Error::InvalidInput(format!(
                        "unit {i} has class label {d} outside 1..=3"
                    )));
                }
            }
        }
        Ok(Dataset { units, p })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn into_units(self) -> Vec<Unit> {
        self.units
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.units.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn t_values(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.t).collect()
    }

    pub fn n_verified(&self) -> usize {
        self.units.iter().filter(|u| u.verified()).count()
    }

    pub fn is_fully_verified(&self) -> bool {
        self.units.iter().all(Unit::verified)
    }

    pub fn verified_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.units[i].verified()).collect()
    }

    pub fn verified_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for k in self.units.iter().filter_map(Unit::class_index) {
            counts[k] += 1;
        }
        counts
    }

    /// Joint feature vector `(t, a1, ..., ap)` of unit `i`.
    pub fn features(&self, i: usize) -> Vec<f64> {
        let u = &self.units[i];
        let mut x = Vec::with_capacity(self.p + 1);
        x.push(u.t);
        x.extend_from_slice(&u.a);
        x
    }

    /// Row-major `n x (p+1)` feature matrix.
    pub fn feature_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * (self.p + 1));
        for u in &self.units {
            out.push(u.t);
            out.extend_from_slice(&u.a);
        }
        out
    }

    /// Copy with every label removed where `keep[i]` is false.
    pub fn with_verification(&self, keep: &[bool]) -> Result<Dataset> {
        if keep.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: keep.len(),
            });
        }
        let units = self
            .units
            .iter()
            .zip(keep)
            .map(|(u, &k)| Unit {
                t: u.t,
                a: u.a.clone(),
                d: if k { u.d } else { None },
            })
            .collect();
        Ok(Dataset { units, p: self.p })
    }

    /// Dataset made of the units at `indices` (repeats allowed).
    pub fn resample(&self, indices: &[usize]) -> Dataset {
        Dataset {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            p: self.p,
        }
    }
}

/// A pair of cut points with `c1 < c2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPair {
    c1: f64,
    c2: f64,
}

impl CutPair {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !c1.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidInput("cut points must be finite".into()));
        }
        if c1 >= c2 {
            return Err(Error::InvalidInput(format!(
                "cut points must satisfy c1 < c2 (got {c1}, {c2})"
            )));
        }
        Ok(CutPair { c1, c2 })
    }

    #[inline]
    pub fn c1(&self) -> f64 {
        self.c1
    }

    #[inline]
    pub fn c2(&self) -> f64 {
        self.c2
    }
}

impl fmt::Display for CutPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.c1, self.c2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorTag {
    Complete,
    Fi,
    Msi,
    Ipw,
    Spe,
    Knn,
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EstimatorTag::Complete => "COMPLETE",
            EstimatorTag::Fi => "FI",
            EstimatorTag::Msi => "MSI",
            EstimatorTag::Ipw => "IPW",
            EstimatorTag::Spe => "SPE",
            EstimatorTag::Knn => "KNN",
        };
        f.write_str(s)
    }
}

/// Estimated true class fractions at one cut pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TcfEstimate {
    pub tcf: [f64; 3],
    pub cut: CutPair,
    pub estimator: EstimatorTag,
    pub k: Option<usize>,
    /// Estimated covariance of the triple, already on the finite-sample scale.
    pub covariance: Option<[[f64; 3]; 3]>,
    pub out_of_range: bool,
}

impl TcfEstimate {
    pub(crate) fn new(tcf: [f64; 3], cut: CutPair, estimator: EstimatorTag, k: Option<usize>) -> Self {
        let out_of_range = tcf.iter().any(|x| !(0.0..=1.0).contains(x));
        TcfEstimate {
            tcf,
            cut,
            estimator,
            k,
            covariance: None,
            out_of_range,
        }
    }

    /// Per-component standard deviations from the covariance diagonal.
    pub fn sd(&self) -> Option<[f64; 3]> {
        self.covariance
            .map(|c| [c[0][0].sqrt(), c[1][1].sqrt(), c[2][2].sqrt()])
    }
}

// ---------------------------------------------------------------------------
// CSV

fn parse_error(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Reads a dataset from CSV text. Row numbers in errors count the header as row 1.
pub fn load_dataset<R: Read>(source: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();

    let find = |name: &str| names.iter().position(|h| *h == name);
    let t_col = find("t").ok_or_else(|| parse_error(1, "missing column `t`"))?;
    let v_col = find("v").ok_or_else(|| parse_error(1, "missing column `v`"))?;
    let d_col = find("d").ok_or_else(|| parse_error(1, "missing column `d`"))?;
    let mut a_cols = Vec::new();
    for j in 1.. {
        match find(&format!("a{j}")) {
            Some(c) => a_cols.push(c),
            None => break,
        }
    }
    if a_cols.is_empty() {
        return Err(parse_error(1, "missing covariate column `a1`"));
    }
    if names.len() != a_cols.len() + 3 {
        let unexpected: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != t_col && *c != v_col && *c != d_col && !a_cols.contains(c))
            .map(|(_, n)| *n)
            .collect();
        return Err(parse_error(1, format!("unexpected columns {unexpected:?}")));
    }

    let mut units = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != names.len() {
            return Err(parse_error(
                row,
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let number = |col: usize, what: &str| -> Result<f64> {
            let cell = &record[col];
            let x: f64 = cell
                .parse()
                .map_err(|_| parse_error(row, format!("malformed number `{cell}` in column {what}")))?;
            if !x.is_finite() {
                return Err(parse_error(row, format!("non-finite value in column {what}")));
            }
            Ok(x)
        };
        let t = number(t_col, "t")?;
        let a = a_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| number(c, &format!("a{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let v = match &record[v_col] {
            "0" => false,
            "1" => true,
            other => return Err(parse_error(row, format!("verification flag `{other}` not in {{0,1}}"))),
        };
        let d_cell = &record[d_col];
        let d = match (v, d_cell.is_empty()) {
            (false, true) => None,
            (false, false) => return Err(parse_error(row, "label present for unverified unit")),
            (true, true) => return Err(parse_error(row, "label missing for verified unit")),
            (true, false) => {
                let d: u8 = d_cell
                    .parse()
                    .map_err(|_| parse_error(row, format!("malformed class label `{d_cell}`")))?;
                if !(1..=3).contains(&d) {
                    return Err(parse_error(row, format!("class label {d} not in {{1,2,3}}")));
                }
                Some(d)
            }
        };
        units.push(Unit { t, a, d });
    }
    Dataset::new(units)
}

/// Writes the dataset with the same schema `load_dataset` reads.
pub fn write_dataset<W: Write>(dataset: &Dataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["t".to_string()];
    header.extend((1..=dataset.p()).map(|j| format!("a{j}")));
    header.push("v".into());
    header.push("d".into());
    w.write_record(&header)?;
    for u in dataset.units() {
        let mut rec = Vec::with_capacity(dataset.p() + 3);
        rec.push(u.t.to_string());
        rec.extend(u.a.iter().map(f64::to_string));
        rec.push(if u.verified() { "1" } else { "0" }.into());
        rec.push(u.d.map(|d| d.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub n_verified: usize,
    pub verified_counts: [usize; NUM_CLASSES],
    pub verification_rate: f64,
    pub warnings: Vec<String>,
}

pub fn validate(dataset: &Dataset, cut: CutPair) -> ValidationReport {
    let verified_counts = dataset.verified_counts();
    let n_verified = dataset.n_verified();
    let mut warnings = Vec::new();
    for (k, &c) in verified_counts.iter().enumerate() {
        if c == 0 {
            warnings.push(format!("class {} has 0 verified units", k + 1));
        }
    }
    let (lo, hi) = dataset
        .units()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            (lo.min(u.t), hi.max(u.t))
        });
    if cut.c1() < lo {
        warnings.push("c1 is below observed test range".into());
    }
    if cut.c1() > hi {
        warnings.push("c1 exceeds observed test range".into());
    }
    if cut.c2() < lo {
        warnings.push("c2 is below observed test range".into());
    }
    if cut.c2() > hi {
        warnings.push("c2 exceeds observed test range".into());
    }
    ValidationReport {
        n: dataset.n(),
        n_verified,
        verified_counts,
        verification_rate: n_verified as f64 / dataset.n() as f64,
        warnings,
    }
}

// ---------------------------------------------------------------------------
// Verification subsampling

#[derive(Clone, Copy, Debug, PartialEq)]
enum Comparison {
    Gt,
    Ge,
    Lt,
    Le,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Variable {
    T,
    /// Zero-based covariate index.
    A(usize),
}

#[derive(Clone, Debug, PartialEq)]
struct IndicatorTerm {
    coefficient: f64,
    variable: Variable,
    comparison: Comparison,
    threshold: f64,
}

/// Selection probability `b0 + sum_m b_m * I(x_m op threshold_m)`.
///
/// Textual form: `0.05 + 0.35*I(t>0.87) + 0.25*I(a1>0.30) + 0.35*I(a2>45)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRule {
    intercept: f64,
    terms: Vec<IndicatorTerm>,
}

impl SelectionRule {
    pub fn constant(p: f64) -> Self {
        SelectionRule {
            intercept: p,
            terms: Vec::new(),
        }
    }

    pub fn parse(spec: &str) -> Result<Self> {
        let compact: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(Error::InvalidInput("empty selection rule".into()));
        }
        let mut intercept = 0.0;
        let mut terms = Vec::new();
        for raw in split_top_level_plus(&compact) {
            if raw.is_empty() {
                return Err(Error::InvalidInput(format!("empty term in rule `{spec}`")));
            }
            match raw.find("I(") {
                None => {
                    intercept += raw
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("bad constant `{raw}` in rule")))?;
                }
                Some(pos) => {
                    let coefficient = match &raw[..pos] {
                        "" => 1.0,
                        c => c
                            .strip_suffix('*')
                            .ok_or_else(|| Error::InvalidInput(format!("expected `*` before I( in `{raw}`")))?
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidInput(format!("bad coefficient in `{raw}`")))?,
                    };
                    let inner = raw[pos + 2..]
                        .strip_suffix(')')
                        .ok_or_else(|| Error::InvalidInput(format!("unclosed indicator in `{raw}`")))?;
                    let (variable, comparison, threshold) = parse_condition(inner)?;
                    terms.push(IndicatorTerm {
                        coefficient,
                        variable,
                        comparison,
                        threshold,
                    });
                }
            }
        }
        Ok(SelectionRule { intercept, terms })
    }

    /// Selection probability of a unit (not clamped).
    pub fn probability(&self, unit: &Unit) -> Result<f64> {
        let mut p = self.intercept;
        for term in &self.terms {
            let x = match term.variable {
                Variable::T => unit.t,
                Variable::A(j) => *unit.a.get(j).ok_or_else(|| {
                    Error::InvalidInput(format!("rule references a{} but data has {} covariates", j + 1, unit.a.len()))
                })?,
            };
            let hit = match term.comparison {
                Comparison::Gt => x > term.threshold,
                Comparison::Ge => x >= term.threshold,
                Comparison::Lt => x < term.threshold,
                Comparison::Le => x <= term.threshold,
            };
            if hit {
                p += term.coefficient;
            }
        }
        Ok(p)
    }
}

fn split_top_level_plus(s: &str) -> Vec<&str> {
    // '+' inside I(...) or in an exponent (1e+5) does not separate terms.
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut start = 0;
    let mut out = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth = depth.saturating_sub(1),
            b'+' if depth == 0 && i > 0 && !matches!(bytes[i - 1], b'e' | b'E') => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_condition(inner: &str) -> Result<(Variable, Comparison, f64)> {
    let ops = [(">=", Comparison::Ge), ("<=", Comparison::Le), (">", Comparison::Gt), ("<", Comparison::Lt)];
    for (sym, cmp) in ops {
        if let Some(pos) = inner.find(sym) {
            let var = &inner[..pos];
            let thr = &inner[pos + sym.len()..];
            let variable = parse_variable(var)?;
            let threshold = thr
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad threshold `{thr}`")))?;
            return Ok((variable, cmp, threshold));
        }
    }
    Err(Error::InvalidInput(format!("no comparison operator in `I({inner})`")))
}

pub(crate) fn parse_variable_name(var: &str) -> Option<usize> {
    // 0 => t, j >= 1 => a_j
    if var == "t" {
        return Some(0);
    }
    var.strip_prefix('a')
        .and_then(|j| j.parse::<usize>().ok())
        .filter(|&j| j >= 1)
}

fn parse_variable(var: &str) -> Result<Variable> {
    match parse_variable_name(var) {
        Some(0) => Ok(Variable::T),
        Some(j) => Ok(Variable::A(j - 1)),
        None => Err(Error::InvalidInput(format!("unknown variable `{var}`"))),
    }
}

/// Re-draws verification status for a fully verified dataset according to `rule`.
///
/// Probabilities within `1e-12` of `[0, 1]` are accepted; anything further out is an
/// error rather than being clamped.
pub fn subsample_verification(dataset: &Dataset, rule: &SelectionRule, seed: u64) -> Result<Dataset> {
    if !dataset.is_fully_verified() {
        return Err(Error::InvalidInput(
            "subsampling requires a fully verified dataset".into(),
        ));
    }
    const SLACK: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(dataset.n());
    for (i, u) in dataset.units().iter().enumerate() {
        let p = rule.probability(u)?;
        if !(-SLACK..=1.0 + SLACK).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "selection probability {p} outside [0,1] for unit {i}"
            )));
        }
        let draw: f64 = rng.random();
        keep.push(draw < p);
    }
    dataset.with_verification(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<Dataset> {
        load_dataset(text.as_bytes())
    }

    #[test]
    fn loads_verified_row() {
        let ds = csv("t,a1,v,d\n1.2,0.3,1,2\n").unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.units()[0], Unit::new(1.2, vec![0.3], Some(2)));
    }

    #[test]
    fn loads_unverified_row() {
        let ds = csv("t,a1,v,d\n1.2,0.3,0,\n").unwrap();
        assert_eq!(ds.units()[0].d, None);
        assert!(!ds.units()[0].verified());
    }

    #[test]
    fn rejects_label_on_unverified_unit() {
        let err = csv("t,a1,v,d\n1.2,0.3,0,2\n").unwrap_err();
        assert_eq!(err.to_string(), "label present for unverified unit, row 2");
    }

    #[test]
    fn reports_row_numbers_for_bad_input() {
        let cases = [
            ("t,a1,v,d\n1,2,1,1\nx,2,1,1\n", 3),
            ("t,a1,v,d\n1,2,2,1\n", 2),
            ("t,a1,v,d\n1,2,1,\n", 2),
            ("t,a1,v,d\n1,2,1,4\n", 2),
            ("t,a1,v,d\n1,2,1,1\n1,2,1\n", 3),
            ("t,a1,v,d\n1,male,1,1\n", 2),
        ];
        for (text, row) in cases {
            match csv(text) {
                Err(Error::Parse { row: r, .. }) => assert_eq!(r, row, "{text}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn header_is_mandatory_and_columns_are_named() {
        assert!(csv("1.2,0.3,1,2\n").is_err());
        assert!(csv("t,v,d\n1,1,1\n").is_err());
        assert!(csv("t,a1,b,v,d\n1,1,1,1,1\n").is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let text = "t,a1,a2,v,d\n0.1,-3.25,1e-7,1,3\n2.5,0.0,17,0,\n";
        let ds = csv(text).unwrap();
        let again = csv(&dataset_to_csv(&ds)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn cut_pair_requires_strict_order() {
        assert!(CutPair::new(1.0, 1.0).is_err());
        assert!(CutPair::new(2.0, 1.0).is_err());
        assert!(CutPair::new(f64::NAN, 1.0).is_err());
        assert!(CutPair::new(1.0, 2.0).is_ok());
    }

    #[test]
    fn validation_report_warnings() {
        let ds = csv("t,a1,v,d\n1,0,1,1\n2,0,1,2\n3,0,1,3\n").unwrap();
        let before = ds.clone();
        let report = validate(&ds, CutPair::new(1.5, 2.5).unwrap());
        assert_eq!(report.verification_rate, 1.0);
        assert!(report.warnings.is_empty());
        assert_eq!(ds, before);

        let ds = csv("t,a1,v,d\n1,0,1,1\n2,0,1,2\n3,0,0,\n").unwrap();
        let report = validate(&ds, CutPair::new(1.5, 9.0).unwrap());
        assert!(report.warnings.iter().any(|w| w == "class 3 has 0 verified units"));
        assert!(report.warnings.iter().any(|w| w == "c2 exceeds observed test range"));
        assert_eq!(report.verified_counts, [1, 1, 0]);
    }

    #[test]
    fn parses_selection_rule() {
        let rule = SelectionRule::parse("0.05 + 0.35*I(t>0.87) + 0.25*I(a1>0.30) + 0.35*I(a2>45)").unwrap();
        let u = Unit::new(1.0, vec![0.1, 50.0], Some(1));
        let p = rule.probability(&u).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
        let all = Unit::new(1.0, vec![0.5, 50.0], Some(1));
        assert!((rule.probability(&all).unwrap() - 1.0).abs() < 1e-12);
        assert!(SelectionRule::parse("0.1 + 0.2*J(t>1)").is_err());
        assert!(SelectionRule::parse("0.1 + 0.2*I(q>1)").is_err());
        assert_eq!(SelectionRule::parse("1").unwrap(), SelectionRule::constant(1.0));
    }

    fn verified_data(n: usize) -> Dataset {
        let units = (0..n)
            .map(|i| Unit::new(i as f64 * 0.1, vec![(i % 7) as f64], Some((i % 3) as u8 + 1)))
            .collect();
        Dataset::new(units).unwrap()
    }

    #[test]
    fn subsample_always_one_is_identity() {
        let ds = verified_data(40);
        let out = subsample_verification(&ds, &SelectionRule::constant(1.0), 3).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn subsample_always_zero_blanks_everything() {
        let ds = verified_data(40);
        let out = subsample_verification(&ds, &SelectionRule::constant(0.0), 3).unwrap();
        assert_eq!(out.n_verified(), 0);
    }

    #[test]
    fn subsample_rejects_out_of_range_probability() {
        let ds = verified_data(10);
        let rule = SelectionRule::parse("0.9 + 0.2*I(t>0.5)").unwrap();
        assert!(subsample_verification(&ds, &rule, 1).is_err());
        let partial = ds.with_verification(&[false; 10]).unwrap();
        assert!(subsample_verification(&partial, &SelectionRule::constant(1.0), 1).is_err());
    }

    #[test]
    fn subsample_is_deterministic() {
        let ds = verified_data(200);
        let rule = SelectionRule::parse("0.2 + 0.5*I(t>10)").unwrap();
        let a = subsample_verification(&ds, &rule, 42).unwrap();
        let b = subsample_verification(&ds, &rule, 42).unwrap();
        assert_eq!(a, b);
        let c = subsample_verification(&ds, &rule, 43).unwrap();
        assert_ne!(a, c);
    }
}
