//! Utility functions scoring a parameter estimate against the truth.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilityFn {
    /// `exp(-|e|^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `1 - |e|_2^2 / epsilon`
    Quadratic { epsilon: f64 },
    /// `1 - |e|_1 / epsilon`
    L1 { epsilon: f64 },
    /// `u = 1`: reduces EROC to ROC.
    Constant,
}

impl UtilityFn {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            UtilityFn::Gaussian { sigma } => ("utility.sigma", sigma),
            UtilityFn::Quadratic { epsilon } | UtilityFn::L1 { epsilon } => ("utility.epsilon", epsilon),
            UtilityFn::Constant => return Ok(()),
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, "must be positive and finite"));
        }
        Ok(())
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, UtilityFn::Quadratic { .. })
    }

    pub fn evaluate(&self, estimate: &[f64], truth: &[f64]) -> Result<f64> {
        if estimate.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: estimate.len(),
            });
        }
        Ok(self.evaluate_unchecked(estimate, truth))
    }

    pub(crate) fn evaluate_unchecked(&self, estimate: &[f64], truth: &[f64]) -> f64 {
        let errors = estimate.iter().zip(truth).map(|(a, b)| a - b);
        match *self {
            UtilityFn::Gaussian { sigma } => {
                let sq: f64 = errors.map(|e| e * e).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
            UtilityFn::Quadratic { epsilon } => 1.0 - errors.map(|e| e * e).sum::<f64>() / epsilon,
            UtilityFn::L1 { epsilon } => 1.0 - errors.map(f64::abs).sum::<f64>() / epsilon,
            UtilityFn::Constant => 1.0,
        }
    }

    /// `d u / d estimate`, written into `out`. The l1 variant uses the
    /// subgradient 0 at zero error.
    pub fn gradient(&self, estimate: &[f64], truth: &[f64], out: &mut [f64]) {
        match *self {
            UtilityFn::Gaussian { sigma } => {
                let u = self.evaluate_unchecked(estimate, truth);
                let s2 = sigma * sigma;
                for ((o, a), b) in out.iter_mut().zip(estimate).zip(truth) {
                    *o = -u * (a - b) / s2;
                }
            }
            UtilityFn::Quadratic { epsilon } => {
                for ((o, a), b) in out.iter_mut().zip(estimate).zip(truth) {
                    *o = -2.0 * (a - b) / epsilon;
                }
            }
            UtilityFn::L1 { epsilon } => {
                for ((o, a), b) in out.iter_mut().zip(estimate).zip(truth) {
                    let e = a - b;
                    *o = if e > 0.0 {
                        -1.0 / epsilon
                    } else if e < 0.0 {
                        1.0 / epsilon
                    } else {
                        0.0
                    };
                }
            }
            UtilityFn::Constant => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    /// Parses `gaussian:3`, `quadratic:200`, `l1:20`, `constant`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = || -> Result<f64> {
            arg.ok_or_else(|| Error::invalid("utility", format!("`{kind}` needs a parameter, e.g. {kind}:3")))?
                .parse::<f64>()
                .map_err(|e| Error::invalid("utility", e.to_string()))
        };
        let u = match kind {
            "gaussian" => UtilityFn::Gaussian { sigma: num()? },
            "quadratic" => UtilityFn::Quadratic { epsilon: num()? },
            "l1" => UtilityFn::L1 { epsilon: num()? },
            "constant" => UtilityFn::Constant,
            other => return Err(Error::invalid("utility", format!("unknown kind `{other}`"))),
        };
        u.validate()?;
        Ok(u)
    }
}

impl fmt::Display for UtilityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityFn::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            UtilityFn::Quadratic { epsilon } => write!(f, "quadratic:{epsilon}"),
            UtilityFn::L1 { epsilon } => write!(f, "l1:{epsilon}"),
            UtilityFn::Constant => write!(f, "constant"),
        }
    }
}
