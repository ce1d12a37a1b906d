//! Poisson GLM with log link and exposure offset, fitted by Newton/IRLS.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::loss::nll_from_eta;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_REL_TOL: f64 = 1e-10;
pub const IRLS_GRAD_TOL: f64 = 1e-8;
const RIDGE_JITTER: f64 = 1e-10;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// Final mean NLL (plus penalty for penalised fits), without `ln y!`.
    pub objective: f64,
    /// Gradient infinity norm, or the KKT residual for penalised fits.
    pub gradient_norm: f64,
    pub converged: bool,
    /// Objective after each accepted iteration, starting value first.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub columns: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub eta: f64,
    pub alpha: f64,
    /// Columns held at zero because they were constant on the fitting rows.
    pub fixed_zero: Vec<bool>,
    pub convergence: Convergence,
}

impl GlmFit {
    /// `β0 + xᵀβ`, excluding the offset.
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (x * beta).add_scalar(self.intercept)
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }
}

/// Columns whose values do not vary over the rows of `x`.
pub(crate) fn constant_columns(x: &DMatrix<f64>) -> Vec<bool> {
    x.column_iter()
        .map(|c| {
            let (lo, hi) = (c.min(), c.max());
            c.is_empty() || hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0)
        })
        .collect()
}

/// `ln(Σy / Σe)`, the intercept-only maximum likelihood estimate.
pub fn null_intercept(m: &FeatureMatrix) -> Result<f64> {
    let sy: f64 = crate::stats::sum(m.target.iter().copied());
    let se: f64 = crate::stats::sum(m.offset.iter().map(|o| o.exp()));
    if m.n_rows() == 0 {
        return Err(Error::fit("glm", "empty training set"));
    }
    if !(sy > 0.0) {
        return Err(Error::fit("glm", "all claim counts are zero; the intercept has no finite estimate"));
    }
    Ok((sy / se).ln())
}

/// Intercept column followed by the non-fixed columns of `x`.
pub(crate) fn design(x: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::from_element(n, active.len() + 1, 1.0);
    for (k, &j) in active.iter().enumerate() {
        d.set_column(k + 1, &x.column(j));
    }
    d
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(g));
    }
    let mut jitter = RIDGE_JITTER;
    while jitter < 1.0 {
        let hj = h + DMatrix::identity(h.nrows(), h.ncols()) * jitter;
        if let Some(ch) = hj.cholesky() {
            warn!("singular normal equations; solved with ridge jitter {jitter:e}");
            return Ok(ch.solve(g));
        }
        jitter *= 10.0;
    }
    Err(Error::fit("glm", "normal equations are not positive definite"))
}

/// Unpenalised maximum likelihood by Newton's method with step halving.
pub fn fit_glm_poisson(m: &FeatureMatrix) -> Result<GlmFit> {
    let n = m.n_rows();
    let p = m.n_cols();
    let fixed = constant_columns(&m.values);
    let active: Vec<usize> = (0..p).filter(|&j| !fixed[j]).collect();
    if n < active.len() + 1 {
        warn!("fitting {} parameters on {n} rows", active.len() + 1);
    }
    let d = design(&m.values, &active);
    let y = &m.target;
    let nf = n as f64;

    let mut theta = DVector::zeros(active.len() + 1);
    theta[0] = null_intercept(m)?;
    let mut eta = &m.offset + &d * &theta;
    let mut obj = nll_from_eta(y, &eta);
    let mut trace = vec![obj];
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITER {
        let mu = eta.map(f64::exp);
        let r = &mu - y;
        let g = d.tr_mul(&r) / nf;
        grad_norm = g.amax();
        if grad_norm < IRLS_GRAD_TOL {
            converged = true;
            break;
        }
        let mut dw = d.clone();
        for (i, mut row) in dw.row_iter_mut().enumerate() {
            row *= mu[i];
        }
        let h = d.tr_mul(&dw) / nf;
        let delta = solve_newton(&h, &g)?;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta - &delta * step;
            let cand_eta = &m.offset + &d * &cand;
            let cand_obj = nll_from_eta(y, &cand_eta);
            if cand_obj.is_finite() && cand_obj <= obj {
                accepted = Some((cand, cand_eta, cand_obj));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand, cand_eta, cand_obj)) = accepted else {
            if grad_norm < 1e-6 {
                converged = true;
                break;
            }
            return Err(Error::fit(
                "glm",
                format!("no decrease along the Newton direction at iteration {iterations}; objective {obj}, gradient {grad_norm:e}"),
            ));
        };
        if !cand_obj.is_finite() || cand.iter().any(|v| !v.is_finite()) {
            return Err(Error::fit("glm", format!("diverged at iteration {iterations} (possible separation)")));
        }
        let rel = (obj - cand_obj).abs() / cand_obj.abs().max(f64::MIN_POSITIVE);
        theta = cand;
        eta = cand_eta;
        obj = cand_obj;
        trace.push(obj);
        if rel < IRLS_REL_TOL {
            let r = eta.map(f64::exp) - y;
            grad_norm = (d.tr_mul(&r) / nf).amax();
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("IRLS stopped after {iterations} iterations without meeting the tolerance");
    }
    let mut coefficients = vec![0.0; p];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = theta[k + 1];
    }
    Ok(GlmFit {
        columns: m.columns.clone(),
        intercept: theta[0],
        coefficients,
        eta: 0.0,
        alpha: 0.0,
        fixed_zero: fixed,
        convergence: Convergence { iterations, objective: obj, gradient_norm: grad_norm, converged, trace },
    })
}
