//! Feed-forward network with ReLU hidden layers and a linear log-rate head.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::glm::null_intercept;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 16], epochs: 500, step_size: 1e-2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub columns: Vec<String>,
    pub layers: Vec<Layer>,
    pub config: MlpConfig,
    /// Training loss before the first epoch and after each epoch.
    pub train_loss: Vec<f64>,
}

/// Full-batch objective: mean NLL divided by the mean training count.
///
/// The scale keeps one step size usable across datasets whose counts differ
/// by orders of magnitude; it does not move the minimiser.
#[derive(Debug, Clone, Copy)]
struct LossScale(f64);

impl LossScale {
    fn of(m: &FeatureMatrix) -> Self {
        let ybar = stats::mean(m.target.as_slice());
        LossScale(if ybar > 0.0 { 1.0 / (ybar * m.n_rows() as f64) } else { 1.0 / m.n_rows() as f64 })
    }
}

impl MlpModel {
    /// Uniform `±1/√fan_in` weights, zero biases, output bias at `bias_out`.
    pub fn init(columns: Vec<String>, hidden: &[usize], bias_out: f64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sizes = vec![columns.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0].max(1) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect::<Vec<_>>();
        let mut model = Self {
            columns,
            layers,
            config: MlpConfig { hidden: hidden.to_vec(), seed, ..Default::default() },
            train_loss: Vec::new(),
        };
        model.layers.last_mut().expect("output layer").bias[0] = bias_out;
        model
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.ncols()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights (column-major) then bias, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// Activations per layer, input first; the last entry is `n × 1`.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = &acts[k] * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += l.bias.transpose();
            }
            if k < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Network output `f(x)`, excluding the offset.
    pub fn raw_score(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.forward(x).pop().expect("output").column(0).into_owned()
    }

    fn loss_grad(&self, m: &FeatureMatrix, scale: LossScale) -> (f64, Vec<Layer>) {
        let acts = self.forward(&m.values);
        let f = acts.last().expect("output").column(0);
        let n = m.n_rows();
        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(n, 1);
        for i in 0..n {
            let eta = m.offset[i] + f[i];
            let mu = eta.exp();
            loss += mu - m.target[i] * eta;
            delta[(i, 0)] = (mu - m.target[i]) * scale.0;
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let a_in = &acts[k];
            let gw = delta.transpose() * a_in;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Layer { weights: gw, bias: gb });
            if k > 0 {
                let mut back = &delta * &self.layers[k].weights;
                back.zip_apply(&acts[k], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        (loss * scale.0, grads)
    }

    /// Training objective and its gradient in [`MlpModel::params`] layout.
    pub fn loss_and_gradient(&self, m: &FeatureMatrix) -> (f64, Vec<f64>) {
        let (loss, grads) = self.loss_grad(m, LossScale::of(m));
        let mut flat = Vec::with_capacity(self.n_params());
        for g in &grads {
            flat.extend_from_slice(g.weights.as_slice());
            flat.extend_from_slice(g.bias.as_slice());
        }
        (loss, flat)
    }

    /// Training objective only.
    pub fn loss(&self, m: &FeatureMatrix) -> f64 {
        let f = self.raw_score(&m.values);
        let s = LossScale::of(m);
        (0..m.n_rows())
            .map(|i| {
                let eta = m.offset[i] + f[i];
                eta.exp() - m.target[i] * eta
            })
            .sum::<f64>()
            * s.0
    }
}

pub fn fit_mlp_poisson(m: &FeatureMatrix, cfg: &MlpConfig) -> Result<MlpModel> {
    if !(cfg.step_size > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {}", cfg.step_size)));
    }
    if cfg.hidden.contains(&0) {
        return Err(Error::Config("hidden layers must have at least one unit".into()));
    }
    let base = null_intercept(m).map_err(|e| match e {
        Error::Fit { message, .. } => Error::fit("mlp", message),
        other => other,
    })?;
    let mut model = MlpModel::init(m.columns.clone(), &cfg.hidden, base, cfg.seed);
    model.config = cfg.clone();
    let scale = LossScale::of(m);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = model.loss_grad(m, scale);
        if !loss.is_finite() {
            return Err(Error::fit("mlp", format!("non-finite loss at epoch {epoch}")));
        }
        trace.push(loss);
        for (l, g) in model.layers.iter_mut().zip(&grads) {
            l.weights -= &g.weights * cfg.step_size;
            l.bias -= &g.bias * cfg.step_size;
        }
    }
    let last = model.loss_grad(m, scale).0;
    if !last.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::fit("mlp", format!("non-finite loss at epoch {}", cfg.epochs)));
    }
    trace.push(last);
    model.train_loss = trace;
    Ok(model)
}
