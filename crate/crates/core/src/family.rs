//! Per-observation negative log-likelihoods for the supported outcome families.
//!
//! The Gaussian loss is `(y - eta)^2 / 2`: the dispersion and the normalizing
//! constant do not affect the minimizer and are dropped. The Bernoulli loss is
//! the logit-link negative log-likelihood `log(1 + e^eta) - y eta`.

use alloc::format;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use num_traits::Float;

use crate::error::{GhfmError, Result};

/// Lower bound on the Bernoulli curvature so Newton systems stay nonsingular
/// under separation.
pub const BERNOULLI_HESSIAN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
}

impl Family {
    pub fn validate_outcome(self, y: f64) -> Result<()> {
        match self {
            Family::Gaussian if y.is_finite() => Ok(()),
            Family::Bernoulli if y == 0.0 || y == 1.0 => Ok(()),
            Family::Gaussian => Err(GhfmError::Dataset(format!("non-finite outcome {y}"))),
            Family::Bernoulli => Err(GhfmError::Dataset(format!(
                "outcome {y} is not 0 or 1 for a bernoulli family"
            ))),
        }
    }

    /// Negative log-likelihood of one observation at linear predictor `eta`.
    pub fn nll(self, y: f64, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(match self {
            Family::Gaussian => 0.5 * (y - eta) * (y - eta),
            Family::Bernoulli => softplus(eta) - y * eta,
        })
    }

    /// First and second derivative of [`Family::nll`] with respect to `eta`.
    pub fn grad_hess(self, y: f64, eta: f64) -> Result<(f64, f64)> {
        check_eta(eta)?;
        Ok(match self {
            Family::Gaussian => (eta - y, 1.0),
            Family::Bernoulli => {
                let p = sigmoid(eta);
                (p - y, (p * (1.0 - p)).max(BERNOULLI_HESSIAN_FLOOR))
            }
        })
    }

    /// Inverse link: the mean of the outcome.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Bernoulli => sigmoid(eta),
        }
    }

    /// Intercept minimizing the loss when every other coefficient is zero.
    pub fn null_intercept(self, y: &[f64]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        match self {
            Family::Gaussian => mean,
            Family::Bernoulli => {
                let m = mean.clamp(1e-6, 1.0 - 1e-6);
                (m / (1.0 - m)).ln()
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
        })
    }
}

impl FromStr for Family {
    type Err = GhfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "bernoulli" => Ok(Family::Bernoulli),
            other => Err(GhfmError::Argument(format!("unknown family `{other}`"))),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() {
        Ok(())
    } else {
        Err(GhfmError::Numeric(format!(
            "non-finite linear predictor {eta}"
        )))
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn gaussian_values() {
        assert_eq!(Family::Gaussian.nll(1.5, 1.5).unwrap(), 0.0);
        assert_eq!(Family::Gaussian.grad_hess(2.0, 0.5).unwrap(), (-1.5, 1.0));
    }

    #[test]
    fn bernoulli_symmetric_point() {
        let v = Family::Bernoulli.nll(1.0, 0.0).unwrap();
        assert!((v - core::f64::consts::LN_2).abs() < 1e-15);
        let (g, h) = Family::Bernoulli.grad_hess(1.0, 0.0).unwrap();
        assert_eq!(g, -0.5);
        assert_eq!(h, 0.25);
        let (g0, _) = Family::Bernoulli.grad_hess(0.0, 0.0).unwrap();
        assert_eq!(g0, 0.5);
    }

    #[test]
    fn bernoulli_large_eta_does_not_overflow() {
        // log(1 + e^40) = 40 + log1p(e^-40) = 40 + 4.248354255291589e-18
        let v = Family::Bernoulli.nll(0.0, 40.0).unwrap();
        assert!((v - 40.000_000_000_000_01).abs() < 1e-12);
        let big = Family::Bernoulli.nll(0.0, 800.0).unwrap();
        assert_eq!(big, 800.0);
        let (_, h) = Family::Bernoulli.grad_hess(1.0, 800.0).unwrap();
        assert_eq!(h, BERNOULLI_HESSIAN_FLOOR);
    }

    #[test]
    fn non_finite_eta_is_rejected() {
        assert!(Family::Gaussian.nll(0.0, f64::NAN).is_err());
        assert!(Family::Bernoulli.grad_hess(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("Bernoulli".parse::<Family>().unwrap(), Family::Bernoulli);
        assert_eq!(Family::Gaussian.to_string(), "gaussian");
        assert!("poisson".parse::<Family>().is_err());
    }

    #[test]
    fn outcome_validation() {
        assert!(Family::Bernoulli.validate_outcome(2.0).is_err());
        assert!(Family::Bernoulli.validate_outcome(1.0).is_ok());
        assert!(Family::Gaussian.validate_outcome(f64::NAN).is_err());
    }
}
