//! Covariate terms shared by the treatment and outcome models.
//!
//! A term is a column name, `abs(name)`, or a product of two such factors,
//! written `a*b`. Terms round-trip through their string form, which is also
//! their serde representation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeData;

/// One factor of a term.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Factor {
    Identity(String),
    Abs(String),
}

/// A design column built from covariates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Single(Factor),
    Product(Factor, Factor),
}

impl Factor {
    fn parse(raw: &str) -> Result<Self> {
        let s = raw.trim();
        if let Some(inner) = s.strip_prefix("abs(").and_then(|r| r.strip_suffix(')')) {
            let inner = inner.trim();
            check_name(inner, raw)?;
            return Ok(Factor::Abs(inner.to_string()));
        }
        check_name(s, raw)?;
        Ok(Factor::Identity(s.to_string()))
    }

    fn column(&self) -> &str {
        match self {
            Factor::Identity(c) | Factor::Abs(c) => c,
        }
    }

    fn apply(&self, v: f64) -> f64 {
        match self {
            Factor::Identity(_) => v,
            Factor::Abs(_) => v.abs(),
        }
    }
}

fn check_name(name: &str, raw: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(Error::Spec(format!("cannot parse term `{raw}`")))
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Identity(c) => write!(f, "{c}"),
            Factor::Abs(c) => write!(f, "abs({c})"),
        }
    }
}

impl Term {
    pub fn column(name: &str) -> Self {
        Term::Single(Factor::Identity(name.to_string()))
    }

    /// Columns of `data` this term reads.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            Term::Single(a) => vec![a.column()],
            Term::Product(a, b) => vec![a.column(), b.column()],
        }
    }

    /// Term value for every node.
    pub fn evaluate(&self, data: &NodeData) -> Result<Vec<f64>> {
        let get = |f: &Factor| {
            data.column(f.column())
                .ok_or_else(|| Error::Spec(format!("unknown covariate column `{}`", f.column())))
        };
        match self {
            Term::Single(a) => Ok(get(a)?.iter().map(|&v| a.apply(v)).collect()),
            Term::Product(a, b) => {
                let (ca, cb) = (get(a)?, get(b)?);
                Ok(ca.iter().zip(cb).map(|(&u, &v)| a.apply(u) * b.apply(v)).collect())
            }
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('*').collect();
        match parts.as_slice() {
            [a] => Ok(Term::Single(Factor::parse(a)?)),
            [a, b] => Ok(Term::Product(Factor::parse(a)?, Factor::parse(b)?)),
            _ => Err(Error::Spec(format!("term `{s}` has more than two factors"))),
        }
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Single(a) => write!(f, "{a}"),
            Term::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

/// Parses a list of term strings.
pub fn parse_terms<S: AsRef<str>>(terms: &[S]) -> Result<Vec<Term>> {
    terms.iter().map(|t| t.as_ref().parse()).collect()
}

/// Evaluates terms into an `n x terms.len()` matrix.
pub fn term_matrix(data: &NodeData, terms: &[Term]) -> Result<DMatrix<f64>> {
    let cols = terms.iter().map(|t| t.evaluate(data)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(data.n_nodes(), terms.len(), |i, k| cols[k][i]))
}

/// Fails with the names of columns that are (numerically) linear combinations
/// of the columns before them.
pub fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for k in 0..x.ncols() {
        let col = x.column(k).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            dependent.push(names[k].clone());
        } else {
            basis.push(r / rn);
        }
    }
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { columns: dependent })
    }
}
