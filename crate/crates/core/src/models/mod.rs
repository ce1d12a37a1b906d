//! Poisson-loss estimators with log link and exposure offset.

pub mod enet;
pub mod gbt;
pub mod glm;
pub mod loss;
pub mod mlp;

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use enet::{eta_max, fit_glm_elasticnet, fit_glm_elasticnet_with, kkt_residual, EnetOptions};
pub use gbt::{fit_gbt_poisson, GbtConfig, GbtModel};
pub use glm::{fit_glm_poisson, Convergence, GlmFit};
pub use loss::{poisson_nll, PoissonLossValue};
pub use mlp::{fit_mlp_poisson, MlpConfig, MlpModel};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Glm,
    GlmEnet,
    Gbt,
    Mlp,
}

impl ModelFamily {
    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Glm => "glm",
            ModelFamily::GlmEnet => "glm_enet",
            ModelFamily::Gbt => "gbt",
            ModelFamily::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glm" => Ok(ModelFamily::Glm),
            "glm_enet" | "enet" | "reg_glm" => Ok(ModelFamily::GlmEnet),
            "gbt" | "xgb" => Ok(ModelFamily::Gbt),
            "mlp" => Ok(ModelFamily::Mlp),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparams {
    Glm,
    GlmEnet { eta: f64, alpha: f64 },
    Gbt(GbtConfig),
    Mlp(MlpConfig),
}

impl Hyperparams {
    pub fn family(&self) -> ModelFamily {
        match self {
            Hyperparams::Glm => ModelFamily::Glm,
            Hyperparams::GlmEnet { .. } => ModelFamily::GlmEnet,
            Hyperparams::Gbt(_) => ModelFamily::Gbt,
            Hyperparams::Mlp(_) => ModelFamily::Mlp,
        }
    }

    /// Compact `key=value` list, `;`-separated.
    pub fn label(&self) -> String {
        match self {
            Hyperparams::Glm => "-".into(),
            Hyperparams::GlmEnet { eta, alpha } => format!("eta={eta};alpha={alpha}"),
            Hyperparams::Gbt(c) => format!(
                "rounds={};depth={};nu={};lambda={};gamma={};min_child_weight={}",
                c.rounds, c.max_depth, c.learning_rate, c.lambda, c.gamma, c.min_child_weight
            ),
            Hyperparams::Mlp(c) => format!(
                "hidden={};step={};epochs={};seed={}",
                c.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
                c.step_size,
                c.epochs,
                c.seed
            ),
        }
    }

    /// `Greater` when `self` regularises more strongly than `other`.
    pub fn regularization_cmp(&self, other: &Hyperparams) -> Ordering {
        match (self, other) {
            (Hyperparams::GlmEnet { eta: e1, alpha: a1 }, Hyperparams::GlmEnet { eta: e2, alpha: a2 }) => {
                e1.total_cmp(e2).then(a1.total_cmp(a2))
            }
            (Hyperparams::Gbt(a), Hyperparams::Gbt(b)) => b
                .rounds
                .cmp(&a.rounds)
                .then(b.max_depth.cmp(&a.max_depth))
                .then(b.learning_rate.total_cmp(&a.learning_rate)),
            (Hyperparams::Mlp(a), Hyperparams::Mlp(b)) => {
                let units = |c: &MlpConfig| c.hidden.iter().sum::<usize>();
                units(b).cmp(&units(a)).then(b.step_size.total_cmp(&a.step_size))
            }
            _ => Ordering::Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Glm(GlmFit),
    Gbt(GbtModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn columns(&self) -> &[String] {
        match self {
            Model::Glm(f) => &f.columns,
            Model::Gbt(f) => &f.columns,
            Model::Mlp(f) => &f.columns,
        }
    }

    /// Predicted counts `e · exp(f(x))`.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<DVector<f64>> {
        if self.columns() != m.columns.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "model trained on {} columns [{}], matrix has {} [{}]",
                self.columns().len(),
                abbreviate(self.columns()),
                m.columns.len(),
                abbreviate(&m.columns)
            )));
        }
        let f = match self {
            Model::Glm(g) => g.linear_predictor(&m.values),
            Model::Gbt(g) => g.raw_score(&m.values),
            Model::Mlp(g) => g.raw_score(&m.values),
        };
        Ok((&m.offset + f).map(f64::exp))
    }
}

fn abbreviate(cols: &[String]) -> String {
    if cols.len() <= 4 {
        cols.join(", ")
    } else {
        format!("{}, ..., {}", cols[..2].join(", "), cols[cols.len() - 1])
    }
}

pub fn fit_model(m: &FeatureMatrix, hp: &Hyperparams, enet: &EnetOptions) -> Result<Model> {
    Ok(match hp {
        Hyperparams::Glm => Model::Glm(fit_glm_poisson(m)?),
        Hyperparams::GlmEnet { eta, alpha } => Model::Glm(fit_glm_elasticnet_with(m, *eta, *alpha, enet)?),
        Hyperparams::Gbt(cfg) => Model::Gbt(fit_gbt_poisson(m, cfg)?),
        Hyperparams::Mlp(cfg) => Model::Mlp(fit_mlp_poisson(m, cfg)?),
    })
}

/// Non-zero GLM coefficients sorted by magnitude, intercept first.
pub fn nonzero_coefficients(fit: &GlmFit) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = fit
        .columns
        .iter()
        .zip(&fit.coefficients)
        .filter(|(_, b)| **b != 0.0)
        .map(|(c, b)| (c.clone(), *b))
        .collect();
    out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    out.insert(0, ("Intercept".into(), fit.intercept));
    out
}

/// Plain-text summary: family, hyperparameters, convergence and, for GLMs,
/// the non-zero coefficients.
pub fn summary_report(model: &Model, hp: &Hyperparams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "family: {}", hp.family());
    let _ = writeln!(s, "hyperparameters: {}", hp.label());
    let _ = writeln!(s, "columns: {}", model.columns().len());
    match model {
        Model::Glm(f) => {
            let c = &f.convergence;
            let _ = writeln!(
                s,
                "convergence: iterations={} objective={:.10} residual={:.3e} converged={}",
                c.iterations, c.objective, c.gradient_norm, c.converged
            );
            let _ = writeln!(s, "non-zero coefficients:");
            let rows = nonzero_coefficients(f);
            let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
            let _ = writeln!(s, "  {:<w$}  {:>10}", "Variable", "Coefficient");
            for (name, b) in rows {
                let _ = writeln!(s, "  {name:<w$}  {b:>10.4}");
            }
            let zeroed = f.coefficients.iter().filter(|b| **b == 0.0).count();
            if zeroed > 0 {
                let _ = writeln!(s, "  ({zeroed} coefficients at zero)");
            }
        }
        Model::Gbt(g) => {
            let _ = writeln!(s, "base score: {:.10}", g.base_score);
            let _ = writeln!(s, "trees: {}", g.trees.len());
            if let Some(last) = g.train_nll.last() {
                let _ = writeln!(s, "final training nll: {last:.10}");
            }
        }
        Model::Mlp(n) => {
            let sizes = n.sizes().iter().map(usize::to_string).collect::<Vec<_>>().join("-");
            let _ = writeln!(s, "layers: {sizes}");
            let _ = writeln!(s, "parameters: {}", n.n_params());
            if let Some(last) = n.train_loss.last() {
                let _ = writeln!(s, "final training loss: {last:.10}");
            }
        }
    }
    s
}
