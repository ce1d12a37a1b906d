//! Second-order gradient boosting of regression trees under Poisson loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::null_intercept;
use super::loss::nll_from_eta;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum gain for a split.
    pub gamma: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { rounds: 100, max_depth: 3, learning_rate: 0.1, min_child_weight: 1.0, lambda: 1.0, gamma: 0.0 }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning rate must lie in (0, 1], got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0 && self.min_child_weight >= 0.0) {
            return Err(Error::Config("lambda, gamma and min_child_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[column] < threshold` go left.
    Split { column: usize, threshold: f64, gain: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// Nodes in breadth-first order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: impl Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { weight } => return *weight,
                Node::Split { column, threshold, left, right, .. } => {
                    k = if x(*column) < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match &t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub columns: Vec<String>,
    pub base_score: f64,
    pub config: GbtConfig,
    pub trees: Vec<Tree>,
    /// Mean training NLL before the first round and after each round.
    pub train_nll: Vec<f64>,
}

impl GbtModel {
    /// Boosted log-rate excluding the offset.
    pub fn raw_score(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(x.nrows(), |i, _| {
            self.base_score
                + self.config.learning_rate * self.trees.iter().map(|t| t.predict_row(|j| x[(i, j)])).sum::<f64>()
        })
    }

    /// Column, threshold and gain of the first tree's root split.
    pub fn first_split(&self) -> Option<(usize, f64, f64)> {
        match self.trees.first()?.nodes.first()? {
            Node::Split { column, threshold, gain, .. } => Some((*column, *threshold, *gain)),
            Node::Leaf { .. } => None,
        }
    }
}

/// Best split found so far for one node.
#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    column: usize,
    threshold: f64,
}

/// Threshold strictly between `a < b` such that `a < t <= b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    if m > a { m } else { b }
}

pub(crate) fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    sorted: &'a [Vec<usize>],
    cfg: &'a GbtConfig,
}

impl Grower<'_> {
    fn grow(&self, g: &[f64], h: &[f64]) -> Tree {
        let n = g.len();
        let mut nodes: Vec<Node> = vec![Node::Leaf { weight: 0.0 }];
        // Row -> open node at the current level (usize::MAX once settled).
        let mut node_of = vec![0usize; n];
        let mut open = vec![0usize];
        for depth in 0..=self.cfg.max_depth {
            if open.is_empty() {
                break;
            }
            let slot: std::collections::HashMap<usize, usize> = open.iter().enumerate().map(|(s, &k)| (k, s)).collect();
            let mut gsum = vec![0.0; open.len()];
            let mut hsum = vec![0.0; open.len()];
            for i in 0..n {
                if let Some(&s) = slot.get(&node_of[i]) {
                    gsum[s] += g[i];
                    hsum[s] += h[i];
                }
            }
            let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
            if depth < self.cfg.max_depth {
                for (col, order) in self.sorted.iter().enumerate() {
                    let mut gl = vec![0.0; open.len()];
                    let mut hl = vec![0.0; open.len()];
                    let mut last: Vec<Option<f64>> = vec![None; open.len()];
                    for &i in order {
                        let Some(&s) = slot.get(&node_of[i]) else { continue };
                        let v = self.x[(i, col)];
                        if let Some(prev) = last[s] {
                            if v > prev {
                                let (gr, hr) = (gsum[s] - gl[s], hsum[s] - hl[s]);
                                if hl[s] >= self.cfg.min_child_weight && hr >= self.cfg.min_child_weight {
                                    let gain = split_gain(gl[s], hl[s], gr, hr, self.cfg.lambda) - self.cfg.gamma;
                                    if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                        best[s] = Some(Candidate { gain, column: col, threshold: midpoint(prev, v) });
                                    }
                                }
                            }
                        }
                        gl[s] += g[i];
                        hl[s] += h[i];
                        last[s] = Some(v);
                    }
                }
            }
            let mut next_open = Vec::new();
            let mut children = std::collections::HashMap::new();
            for (s, &k) in open.iter().enumerate() {
                match best[s] {
                    Some(c) => {
                        let left = nodes.len();
                        nodes.push(Node::Leaf { weight: 0.0 });
                        nodes.push(Node::Leaf { weight: 0.0 });
                        nodes[k] = Node::Split { column: c.column, threshold: c.threshold, gain: c.gain, left, right: left + 1 };
                        children.insert(k, (c.column, c.threshold, left));
                        next_open.push(left);
                        next_open.push(left + 1);
                    }
                    None => {
                        nodes[k] = Node::Leaf { weight: -gsum[s] / (hsum[s] + self.cfg.lambda) };
                    }
                }
            }
            for (i, k) in node_of.iter_mut().enumerate() {
                if let Some(&(col, thr, left)) = children.get(k) {
                    *k = if self.x[(i, col)] < thr { left } else { left + 1 };
                } else {
                    *k = usize::MAX;
                }
            }
            open = next_open;
        }
        Tree { nodes }
    }
}

pub fn fit_gbt_poisson(m: &FeatureMatrix, cfg: &GbtConfig) -> Result<GbtModel> {
    cfg.validate()?;
    if m.n_rows() == 0 {
        return Err(Error::fit("gbt", "empty training set"));
    }
    let base_score = null_intercept(m).map_err(|e| match e {
        Error::Fit { message, .. } => Error::fit("gbt", message),
        other => other,
    })?;
    let x = &m.values;
    let sorted: Vec<Vec<usize>> = (0..m.n_cols())
        .map(|j| {
            let mut idx: Vec<usize> = (0..m.n_rows()).collect();
            idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let grower = Grower { x, sorted: &sorted, cfg };
    let mut margin = m.offset.add_scalar(base_score);
    let mut train_nll = vec![nll_from_eta(&m.target, &margin)];
    let mut trees = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mu = margin.map(f64::exp);
        let g: Vec<f64> = mu.iter().zip(m.target.iter()).map(|(mu, y)| mu - y).collect();
        let h: Vec<f64> = mu.iter().copied().collect();
        let tree = grower.grow(&g, &h);
        for i in 0..m.n_rows() {
            margin[i] += cfg.learning_rate * tree.predict_row(|j| x[(i, j)]);
        }
        if margin.iter().any(|v| !v.is_finite()) {
            return Err(Error::fit("gbt", format!("non-finite margin at round {round}")));
        }
        train_nll.push(nll_from_eta(&m.target, &margin));
        trees.push(tree);
    }
    Ok(GbtModel { columns: m.columns.clone(), base_score, config: *cfg, trees, train_nll })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::glm::tests::matrix;

    fn separable() -> FeatureMatrix {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![((i * 3) % 7) as f64, f64::from(u8::from(i % 2 == 0))]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 30.0 } else { 5.0 }).collect();
        matrix(x, &[100.0; 20], &y)
    }

    #[test]
    fn zero_rounds_give_base_rate() {
        let m = separable();
        let f = fit_gbt_poisson(&m, &GbtConfig { rounds: 0, ..Default::default() }).unwrap();
        assert!(f.trees.is_empty());
        assert!((f.base_score - (350.0f64 / 2000.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn separating_feature_chosen_at_midpoint() {
        let m = separable();
        let cfg = GbtConfig { rounds: 1, max_depth: 1, gamma: 0.0, lambda: 0.0, min_child_weight: 0.0, learning_rate: 0.3 };
        let f = fit_gbt_poisson(&m, &cfg).unwrap();
        let (col, thr, _) = f.first_split().unwrap();
        assert_eq!((col, thr), (1, 0.5));
        assert_eq!(f.trees[0].depth(), 1);
    }

    #[test]
    fn nll_non_increasing() {
        let m = separable();
        let cfg = GbtConfig { rounds: 50, max_depth: 3, learning_rate: 0.1, gamma: 0.0, lambda: 0.0, min_child_weight: 1e-3 };
        let f = fit_gbt_poisson(&m, &cfg).unwrap();
        assert_eq!(f.train_nll.len(), 51);
        assert!(f.train_nll.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(f.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn huge_gamma_leaves_base_rate() {
        let m = separable();
        let cfg = GbtConfig { rounds: 5, gamma: 1e12, ..Default::default() };
        let f = fit_gbt_poisson(&m, &cfg).unwrap();
        let s = f.raw_score(&m.values);
        assert!(s.iter().all(|v| (v - f.base_score).abs() < 1e-9));
    }

    #[test]
    fn midpoint_between_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = midpoint(a, b);
        assert!(a < t && t <= b);
    }
}
