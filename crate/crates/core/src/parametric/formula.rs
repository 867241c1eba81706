//! Working-model formulas: comma-separated terms over `t`, `a1..ap`, each optionally
//! raised to a power, e.g. `t,a1^2/3` or `t,a1^0.667`. An intercept is always added.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::data::{parse_variable_name, Dataset, Unit};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Exponent {
    One,
    Integer(i32),
    /// `num/den` in lowest terms with `den > 1`
    Fraction(i64, i64),
    Real(f64),
}

#[derive(Clone, Debug, PartialEq)]
struct Term {
    /// 0 for `t`, j for `a_j`
    variable: usize,
    exponent: Exponent,
    label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Formula {
    terms: Vec<Term>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn parse_exponent(text: &str) -> Result<Exponent> {
    let bad = || Error::InvalidInput(format!("bad exponent `{text}`"));
    if let Some((num, den)) = text.split_once('/') {
        let num: i64 = num.parse().map_err(|_| bad())?;
        let den: i64 = den.parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        let g = gcd(num, den);
        let (num, den) = if den < 0 { (-num / g, -den / g) } else { (num / g, den / g) };
        return Ok(match den {
            1 if num == 1 => Exponent::One,
            1 => Exponent::Integer(num as i32),
            _ => Exponent::Fraction(num, den),
        });
    }
    let x: f64 = text.parse().map_err(|_| bad())?;
    if !x.is_finite() {
        return Err(bad());
    }
    if x == 1.0 {
        Ok(Exponent::One)
    } else if x.fract() == 0.0 && x.abs() < 1e6 {
        Ok(Exponent::Integer(x as i32))
    } else {
        Ok(Exponent::Real(x))
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let compact: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() || compact == "1" {
            return Ok(Formula { terms: Vec::new() });
        }
        let mut terms = Vec::new();
        for raw in compact.split(',') {
            let (name, exponent) = match raw.split_once('^') {
                Some((name, e)) => (name, parse_exponent(e.trim_start_matches('(').trim_end_matches(')'))?),
                None => (raw, Exponent::One),
            };
            let variable = parse_variable_name(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown formula variable `{name}`")))?;
            terms.push(Term {
                variable,
                exponent,
                label: raw.to_string(),
            });
        }
        Ok(Formula { terms })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.terms.iter().map(|t| t.label.as_str()).collect();
        if labels.is_empty() {
            f.write_str("1")
        } else {
            f.write_str(&labels.join(","))
        }
    }
}

impl Formula {
    /// `t, a1, ..., ap`
    pub fn linear(p: usize) -> Self {
        let names: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=p).map(|j| format!("a{j}")))
            .collect();
        names.join(",").parse().expect("linear formula is well formed")
    }

    /// Number of design columns including the intercept.
    pub fn width(&self) -> usize {
        self.terms.len() + 1
    }

    fn term_value(term: &Term, unit: &Unit) -> Result<f64> {
        let x = if term.variable == 0 {
            unit.t
        } else {
            *unit.a.get(term.variable - 1).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "formula term `{}` references a missing covariate",
                    term.label
                ))
            })?
        };
        let value = match term.exponent {
            Exponent::One => x,
            Exponent::Integer(m) => x.powi(m),
            // real root for odd denominators: sign(x)^num * |x|^(num/den)
            Exponent::Fraction(num, den) => {
                if x < 0.0 && den % 2 == 0 {
                    return Err(Error::InvalidInput(format!(
                        "term `{}` is undefined for negative value {x}",
                        term.label
                    )));
                }
                let magnitude = x.abs().powf(num as f64 / den as f64);
                if x < 0.0 && num % 2 != 0 {
                    -magnitude
                } else {
                    magnitude
                }
            }
            Exponent::Real(p) => {
                if x < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "term `{}` is undefined for negative value {x}",
                        term.label
                    )));
                }
                x.powf(p)
            }
        };
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "term `{}` is not finite at {x}",
                term.label
            )));
        }
        Ok(value)
    }

    /// Design row `(1, f_1(u), ..., f_m(u))`.
    pub fn row(&self, unit: &Unit) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.width());
        row.push(1.0);
        for term in &self.terms {
            row.push(Self::term_value(term, unit)?);
        }
        Ok(row)
    }

    pub fn design(&self, dataset: &Dataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(rows.len(), self.width());
        for (r, &i) in rows.iter().enumerate() {
            for (c, v) in self.row(&dataset.units()[i])?.into_iter().enumerate() {
                x[(r, c)] = v;
            }
        }
        Ok(x)
    }
}
