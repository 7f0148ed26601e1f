//! Named design matrices and the model-terms mini-language.
//!
//! A term list is comma separated: `x1, x2, x1:x2`. A bare name is a main
//! effect, `a:b` is the elementwise product of two columns, and `1` (the
//! intercept) is always included first whether written or not.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A design matrix with a name per column, so numerical errors can point
/// at the offending terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Design {
    pub fn new(matrix: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if matrix.ncols() != names.len() {
            return Err(Error::Dimension(format!(
                "{} column names for {} design columns",
                names.len(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, names })
    }

    /// Unnamed design; columns are called `c0, c1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged design rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let matrix = DMatrix::from_row_slice(rows.len(), p, &flat);
        Self::new(matrix, (0..p).map(|j| format!("c{j}")).collect())
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Design {
        Design {
            matrix: self.matrix.select_rows(idx),
            names: self.names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Main(String),
    Product(String, String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(a) => write!(f, "{a}"),
            Term::Product(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

/// Parsed term list; the intercept is implicit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTerms {
    pub terms: Vec<Term>,
}

impl ModelTerms {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in spec.split(',') {
            let t = raw.trim();
            if t.is_empty() || t == "1" {
                continue;
            }
            let parts: Vec<&str> = t.split(':').map(str::trim).collect();
            let term = match parts.as_slice() {
                [a] => Term::Main(a.to_string()),
                [a, b] if !a.is_empty() && !b.is_empty() => Term::Product(a.to_string(), b.to_string()),
                _ => return Err(Error::Config(format!("bad model term {t:?}"))),
            };
            if !terms.contains(&term) {
                terms.push(term);
            }
        }
        Ok(Self { terms })
    }

    /// Main effects only.
    pub fn main_effects<S: AsRef<str>>(cols: &[S]) -> Self {
        Self {
            terms: cols.iter().map(|c| Term::Main(c.as_ref().to_string())).collect(),
        }
    }

    pub fn with(mut self, extra: &ModelTerms) -> Self {
        for t in &extra.terms {
            if !self.terms.contains(t) {
                self.terms.push(t.clone());
            }
        }
        self
    }

    /// `[1, terms...]` evaluated for every unit of `dataset`.
    pub fn design(&self, dataset: &Dataset) -> Result<Design> {
        let n = dataset.len();
        let p = self.terms.len() + 1;
        let mut m = DMatrix::from_element(n, p, 1.0);
        let col = |name: &str| {
            dataset
                .column(name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        for (j, term) in self.terms.iter().enumerate() {
            match term {
                Term::Main(a) => {
                    let a = col(a)?;
                    for i in 0..n {
                        m[(i, j + 1)] = a[i];
                    }
                }
                Term::Product(a, b) => {
                    let (a, b) = (col(a)?, col(b)?);
                    for i in 0..n {
                        m[(i, j + 1)] = a[i] * b[i];
                    }
                }
            }
        }
        let mut names = vec!["(intercept)".to_string()];
        names.extend(self.terms.iter().map(Term::to_string));
        Design::new(m, names)
    }
}

impl fmt::Display for ModelTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = std::iter::once("1".to_string())
            .chain(self.terms.iter().map(Term::to_string))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_terms() {
        let t = ModelTerms::parse("1, x, w, x:w, x").unwrap();
        assert_eq!(
            t.terms,
            vec![
                Term::Main("x".into()),
                Term::Main("w".into()),
                Term::Product("x".into(), "w".into())
            ]
        );
        assert_eq!(t.to_string(), "1,x,w,x:w");
        assert!(ModelTerms::parse("x:").is_err());
        assert!(ModelTerms::parse("a:b:c").is_err());
    }

    #[test]
    fn builds_design_with_products() {
        let ds = Dataset::from_columns(
            vec![0, 1],
            vec![0, 1],
            vec![0.0, 1.0],
            vec![("x".into(), vec![2.0, 3.0]), ("w".into(), vec![-1.0, 4.0])],
            vec![],
            None,
        )
        .unwrap();
        let d = ModelTerms::parse("x,x:w").unwrap().design(&ds).unwrap();
        assert_eq!(d.names, vec!["(intercept)", "x", "x:w"]);
        assert_eq!(d.matrix.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 12.0]);
        let err = ModelTerms::parse("nope").unwrap().design(&ds).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(_)));
    }
}
