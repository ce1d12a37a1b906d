//! Poisson negative log-likelihood.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonLossValue {
    /// Mean over observations.
    pub value: f64,
    /// Whether `ln y!` is part of `value`.
    pub include_lgamma: bool,
    pub n: usize,
}

/// `(1/n) Σ (μ − y ln μ [+ ln y!])`.
pub fn poisson_nll(y: &[f64], mu: &[f64], include_lgamma: bool) -> Result<PoissonLossValue> {
    if y.len() != mu.len() {
        return Err(Error::Domain(format!("{} counts but {} rates", y.len(), mu.len())));
    }
    if y.is_empty() {
        return Err(Error::Domain("empty input".into()));
    }
    if let Some(m) = mu.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::Domain(format!("rates must be positive, got {m}")));
    }
    let total = stats::sum(y.iter().zip(mu).map(|(&y, &m)| {
        let t = if y == 0.0 { m } else { m - y * m.ln() };
        if include_lgamma { t + ln_gamma(y + 1.0) } else { t }
    }));
    Ok(PoissonLossValue { value: total / y.len() as f64, include_lgamma, n: y.len() })
}

/// Mean NLL without `ln y!` from the linear predictor `η = ln μ`.
pub(crate) fn nll_from_eta(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    stats::sum(y.iter().zip(eta.iter()).map(|(&y, &e)| e.exp() - y * e)) / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terms_collapse() {
        assert_eq!(poisson_nll(&[0.0], &[1.0], false).unwrap().value, 1.0);
    }

    #[test]
    fn two_point_arithmetic() {
        let v = poisson_nll(&[1.0, 3.0], &[2.0, 2.0], false).unwrap().value;
        assert!((v - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn saturated_model_is_minimal_and_nonnegative_with_lgamma() {
        let y = [1.0, 2.0, 5.0, 9.0];
        let floor = poisson_nll(&y, &y, true).unwrap().value;
        assert!(floor >= 0.0);
        for d in [-0.1, -0.01, 0.01, 0.1] {
            for k in 0..y.len() {
                let mut mu = y;
                mu[k] *= 1.0 + d;
                assert!(poisson_nll(&y, &mu, true).unwrap().value > floor);
            }
        }
    }

    #[test]
    fn nonpositive_rate_is_a_domain_error() {
        assert!(poisson_nll(&[1.0], &[0.0], false).is_err());
        assert!(poisson_nll(&[1.0], &[-1.0], true).is_err());
    }

    #[test]
    fn lgamma_term() {
        let a = poisson_nll(&[3.0], &[2.0], false).unwrap().value;
        let b = poisson_nll(&[3.0], &[2.0], true).unwrap().value;
        assert!((b - a - 6f64.ln()).abs() < 1e-12);
    }
}
