//! Elastic-net penalised Poisson GLM by accelerated proximal gradient.
//!
//! Minimises `mean NLL + η[α‖β‖₁ + (1−α)/2 ‖β‖₂²]` with the intercept left
//! unpenalised. Steps use backtracking on the local Lipschitz constant and
//! momentum that restarts whenever the objective would increase, so the
//! accepted iterates are monotone up to rounding. Once the objective stops
//! resolving progress, Newton steps on the support and then plain proximal
//! steps are accepted while they reduce the KKT residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::{constant_columns, design, null_intercept, Convergence, GlmFit};
use super::loss::nll_from_eta;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnetOptions {
    pub max_iter: usize,
    /// Stop once the KKT residual falls below this.
    pub kkt_tol: f64,
}

impl Default for EnetOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, kkt_tol: 1e-9 }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Problem<'a> {
    d: DMatrix<f64>,
    y: &'a DVector<f64>,
    offset: &'a DVector<f64>,
    n: f64,
    eta: f64,
    alpha: f64,
}

impl Problem<'_> {
    fn lin(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.offset + &self.d * theta
    }

    fn grad(&self, lin: &DVector<f64>) -> DVector<f64> {
        let r = lin.map(f64::exp) - self.y;
        self.d.tr_mul(&r) / self.n
    }

    fn penalty(&self, theta: &DVector<f64>) -> f64 {
        let b = theta.rows(1, theta.len() - 1);
        self.eta * (self.alpha * b.lp_norm(1) + 0.5 * (1.0 - self.alpha) * b.norm_squared())
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let mut out = v.clone();
        let l1 = step * self.eta * self.alpha;
        let shrink = 1.0 + step * self.eta * (1.0 - self.alpha);
        for j in 1..out.len() {
            out[j] = soft_threshold(v[j], l1) / shrink;
        }
        out
    }

    fn kkt(&self, theta: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let mut worst = g[0].abs();
        for j in 1..theta.len() {
            let b = theta[j];
            let smooth = g[j] + self.eta * (1.0 - self.alpha) * b;
            let r = if b != 0.0 {
                (smooth + self.eta * self.alpha * b.signum()).abs()
            } else {
                (smooth.abs() - self.eta * self.alpha).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Smallest `η` at which every slope is zero for the given mix (`α > 0`).
pub fn eta_max(m: &FeatureMatrix, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Ok(f64::INFINITY);
    }
    let b0 = null_intercept(m)?;
    let fixed = constant_columns(&m.values);
    let r = (&m.offset).add_scalar(b0).map(f64::exp) - &m.target;
    let g = m.values.tr_mul(&r) / m.n_rows() as f64;
    Ok(g.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(v, _)| v.abs()).fold(0.0, f64::max) / alpha)
}

/// Largest violation of the optimality conditions of `fit` on `m`.
pub fn kkt_residual(m: &FeatureMatrix, fit: &GlmFit) -> f64 {
    let active: Vec<usize> = (0..m.n_cols()).filter(|&j| !fit.fixed_zero[j]).collect();
    let pb = Problem {
        d: design(&m.values, &active),
        y: &m.target,
        offset: &m.offset,
        n: m.n_rows() as f64,
        eta: fit.eta,
        alpha: fit.alpha,
    };
    let mut theta = DVector::zeros(active.len() + 1);
    theta[0] = fit.intercept;
    for (k, &j) in active.iter().enumerate() {
        theta[k + 1] = fit.coefficients[j];
    }
    pb.kkt(&theta, &pb.grad(&pb.lin(&theta)))
}

pub fn fit_glm_elasticnet(m: &FeatureMatrix, eta: f64, alpha: f64) -> Result<GlmFit> {
    fit_glm_elasticnet_with(m, eta, alpha, &EnetOptions::default())
}

pub fn fit_glm_elasticnet_with(m: &FeatureMatrix, eta: f64, alpha: f64, opts: &EnetOptions) -> Result<GlmFit> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("penalty must be finite and non-negative, got {eta}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("mix must lie in [0, 1], got {alpha}")));
    }
    let p = m.n_cols();
    let fixed = constant_columns(&m.values);
    let active: Vec<usize> = (0..p).filter(|&j| !fixed[j]).collect();
    let pb = Problem {
        d: design(&m.values, &active),
        y: &m.target,
        offset: &m.offset,
        n: m.n_rows() as f64,
        eta,
        alpha,
    };

    let mut x = DVector::zeros(active.len() + 1);
    x[0] = null_intercept(m)?;
    let mut lin_x = pb.lin(&x);
    let mut obj_x = nll_from_eta(pb.y, &lin_x) + pb.penalty(&x);
    let mut g_x = pb.grad(&lin_x);
    let mut kkt = pb.kkt(&x, &g_x);
    let mut trace = vec![obj_x];

    let mut y = x.clone();
    let mut lin_y = lin_x.clone();
    let mut momentum = false;
    let mut t = 1.0_f64;
    let mut lipschitz = 1.0_f64;
    let mut iterations = 0;
    let mut converged = kkt <= opts.kkt_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (g_y, f_y) = if momentum {
            (pb.grad(&lin_y), nll_from_eta(pb.y, &lin_y))
        } else {
            (g_x.clone(), obj_x - pb.penalty(&x))
        };
        lipschitz *= 0.8;
        let (z, lin_z, f_z) = loop {
            let z = pb.prox(&(&y - &g_y / lipschitz), 1.0 / lipschitz);
            let lin_z = pb.lin(&z);
            let f_z = nll_from_eta(pb.y, &lin_z);
            let dz = &z - &y;
            let bound = f_y + g_y.dot(&dz) + 0.5 * lipschitz * dz.norm_squared();
            if f_z.is_finite() && f_z <= bound + 1e-15 * f_y.abs() {
                break (z, lin_z, f_z);
            }
            lipschitz *= 2.0;
            if lipschitz > 1e300 {
                return Err(Error::fit("glm_enet", format!("line search failed at iteration {iterations}")));
            }
        };
        let obj_z = f_z + pb.penalty(&z);
        if obj_z > obj_x {
            if momentum {
                momentum = false;
                t = 1.0;
                y = x.clone();
                lin_y = lin_x.clone();
                continue;
            }
            // A plain proximal step can no longer decrease the objective.
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = &z + (&z - &x) * beta;
        lin_y = &lin_z + (&lin_z - &lin_x) * beta;
        momentum = beta > 0.0;
        t = t_next;
        x = z;
        lin_x = lin_z;
        obj_x = obj_z;
        g_x = pb.grad(&lin_x);
        kkt = pb.kkt(&x, &g_x);
        trace.push(obj_x);
        converged = kkt <= opts.kkt_tol;
    }

    if !converged {
        // Newton on the identified support: the penalty is smooth there as
        // long as no sign flips, and convergence is quadratic.
        let support: Vec<usize> = (0..x.len()).filter(|&k| k == 0 || x[k] != 0.0).collect();
        let ds = pb.d.select_columns(support.iter());
        let ridge = eta * (1.0 - alpha);
        while kkt > opts.kkt_tol && iterations < opts.max_iter {
            let w = lin_x.map(|v| v.exp() / pb.n);
            let mut h = ds.tr_mul(&ds.map_with_location(|i, _, v| v * w[i]));
            let mut r = DVector::zeros(support.len());
            for (a, &k) in support.iter().enumerate() {
                r[a] = g_x[k];
                if k > 0 {
                    h[(a, a)] += ridge;
                    r[a] += ridge * x[k] + eta * alpha * x[k].signum();
                }
            }
            let Some(chol) = h.cholesky() else { break };
            let step = chol.solve(&r);
            let mut z = x.clone();
            for (a, &k) in support.iter().enumerate() {
                z[k] -= step[a];
            }
            if support.iter().any(|&k| k > 0 && z[k].signum() != x[k].signum()) {
                break;
            }
            let lin_z = pb.lin(&z);
            let g_z = pb.grad(&lin_z);
            let kkt_z = pb.kkt(&z, &g_z);
            if !(kkt_z < kkt) {
                break;
            }
            iterations += 1;
            obj_x = nll_from_eta(pb.y, &lin_z) + pb.penalty(&z);
            trace.push(obj_x);
            x = z;
            lin_x = lin_z;
            g_x = g_z;
            kkt = kkt_z;
        }
    }
    if kkt > opts.kkt_tol {
        // Objective differences are now below rounding, but the proximal
        // gradient map still contracts, so steps are judged by the KKT
        // residual instead.
        let mut lp = lipschitz;
        let mut rejected = 0;
        while kkt > opts.kkt_tol && iterations < opts.max_iter && rejected < 40 {
            iterations += 1;
            let z = pb.prox(&(&x - &g_x / lp), 1.0 / lp);
            let lin_z = pb.lin(&z);
            let g_z = pb.grad(&lin_z);
            let kkt_z = pb.kkt(&z, &g_z);
            if kkt_z < kkt {
                obj_x = nll_from_eta(pb.y, &lin_z) + pb.penalty(&z);
                trace.push(obj_x);
                x = z;
                g_x = g_z;
                kkt = kkt_z;
                rejected = 0;
            } else {
                lp *= 2.0;
                rejected += 1;
            }
        }
    }
    converged = kkt <= opts.kkt_tol;
    if !converged {
        return Err(Error::NotConverged {
            model: "glm_enet",
            iterations,
            objective: obj_x,
            residual: kkt,
            last_iterate: x.iter().copied().collect(),
            trace,
        });
    }
    let mut coefficients = vec![0.0; p];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = x[k + 1];
    }
    Ok(GlmFit {
        columns: m.columns.clone(),
        intercept: x[0],
        coefficients,
        eta,
        alpha,
        fixed_zero: fixed,
        convergence: Convergence { iterations, objective: obj_x, gradient_norm: kkt, converged, trace },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::glm::fit_glm_poisson;
    use crate::models::glm::tests::matrix;

    fn fixture() -> FeatureMatrix {
        let n = 60;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.37).sin(), (t * 0.11).cos(), ((t * 0.71).sin() * 3.0).tanh()]
            })
            .collect();
        let e: Vec<f64> = (0..n).map(|i| 20.0 + (i % 7) as f64 * 3.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (e[i] * 0.1 * (0.3 * x[i][0] - 0.2 * x[i][1]).exp()).round())
            .collect();
        matrix(x, &e, &y)
    }

    #[test]
    fn zero_penalty_matches_irls() {
        let m = fixture();
        let a = fit_glm_poisson(&m).unwrap();
        let b = fit_glm_elasticnet(&m, 0.0, 0.5).unwrap();
        assert!((a.intercept - b.intercept).abs() < 1e-6);
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-6, "{u} vs {v}");
        }
    }

    #[test]
    fn full_shrinkage_at_eta_max() {
        let m = fixture();
        let em = eta_max(&m, 1.0).unwrap();
        let f = fit_glm_elasticnet(&m, em, 1.0).unwrap();
        assert!(f.coefficients.iter().all(|b| *b == 0.0));
        let sy: f64 = m.target.sum();
        let se: f64 = m.exposure().sum();
        assert!((f.intercept - (sy / se).ln()).abs() < 1e-12);
        let below = fit_glm_elasticnet(&m, em * 0.9, 1.0).unwrap();
        assert!(below.nonzero() > 0);
    }

    #[test]
    fn kkt_and_monotone_objective() {
        let m = fixture();
        for (eta, alpha) in [(0.01, 1.0), (0.05, 0.5), (0.2, 0.0), (0.003, 0.25)] {
            let f = fit_glm_elasticnet(&m, eta, alpha).unwrap();
            assert!(kkt_residual(&m, &f) <= 1e-6);
            assert!(f.convergence.trace.windows(2).all(|w| w[1] <= w[0] + 1e-13 * w[0].abs()));
        }
    }

    #[test]
    fn solution_is_continuous_in_eta() {
        let m = fixture();
        let a = fit_glm_elasticnet(&m, 0.02, 0.75).unwrap();
        let b = fit_glm_elasticnet(&m, 0.02 * (1.0 + 1e-6), 0.75).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let m = fixture();
        assert!(fit_glm_elasticnet(&m, -1.0, 0.5).is_err());
        assert!(fit_glm_elasticnet(&m, 0.1, 1.5).is_err());
    }

    #[test]
    fn iteration_budget_exhaustion_reports_last_iterate() {
        let m = fixture();
        let opts = EnetOptions { max_iter: 1, kkt_tol: 1e-14 };
        match fit_glm_elasticnet_with(&m, 0.001, 0.5, &opts) {
            Err(Error::NotConverged { last_iterate, trace, .. }) => {
                assert_eq!(last_iterate.len(), 4);
                assert!(!trace.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }
}
