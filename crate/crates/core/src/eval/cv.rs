//! Nested cross-validation: inner grid search, outer refit and test RMSE.

use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_fold_plan_from, FoldPlan, DEFAULT_STRAT_BINS, INNER_FOLDS, OUTER_FOLDS};
use super::metrics::rmse;
use crate::error::{Error, Result};
use crate::features::{standardize_apply, standardize_fit, FeatureMatrix, StandardizationParams};
use crate::models::{fit_model, poisson_nll, summary_report, EnetOptions, GbtConfig, Hyperparams, MlpConfig, ModelFamily};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub strat_bins: usize,
    pub enet: EnetOptions,
    /// Relative tolerance under which two mean inner RMSEs count as tied.
    pub tie_rel_tol: f64,
    /// Add `ln y!` to the reported test NLL.
    pub include_lgamma: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { strat_bins: DEFAULT_STRAT_BINS, enet: EnetOptions::default(), tie_rel_tol: 1e-12, include_lgamma: false }
    }
}

/// The declared default grid of each family.
pub fn default_grid(family: ModelFamily, seed: u64) -> Vec<Hyperparams> {
    match family {
        ModelFamily::Glm => vec![Hyperparams::Glm],
        ModelFamily::GlmEnet => {
            let mut g = Vec::new();
            for eta in [0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0] {
                for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    g.push(Hyperparams::GlmEnet { eta, alpha });
                }
            }
            g
        }
        ModelFamily::Gbt => {
            let mut g = Vec::new();
            for max_depth in [2, 3, 4] {
                for learning_rate in [0.05, 0.1, 0.3] {
                    for rounds in [50, 100, 200] {
                        g.push(Hyperparams::Gbt(GbtConfig { rounds, max_depth, learning_rate, ..Default::default() }));
                    }
                }
            }
            g
        }
        ModelFamily::Mlp => {
            let mut g = Vec::new();
            for step_size in [1e-2, 1e-3] {
                for hidden in [vec![32, 16], vec![64, 32]] {
                    g.push(Hyperparams::Mlp(MlpConfig { hidden, step_size, seed, ..Default::default() }));
                }
            }
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub hyperparams: Hyperparams,
    /// Mean inner validation RMSE per grid point; `None` where a fit failed.
    pub scores: Vec<Option<f64>>,
}

/// Validation RMSE of `hp` averaged over the inner folds of `train`.
fn inner_score(train: &FeatureMatrix, inner: &[usize], hp: &Hyperparams, opts: &CvOptions) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..INNER_FOLDS {
        let fit_rows: Vec<usize> = (0..inner.len()).filter(|&i| inner[i] != f).collect();
        let val_rows: Vec<usize> = (0..inner.len()).filter(|&i| inner[i] == f).collect();
        let (fit_m, params) = standardize_fit(&train.select_rows(&fit_rows));
        let val_m = standardize_apply(&train.select_rows(&val_rows), &params)?;
        let model = fit_model(&fit_m, hp, &opts.enet)?;
        let pred = model.predict(&val_m)?;
        total += rmse(val_m.target.as_slice(), pred.as_slice())?;
    }
    Ok(total / INNER_FOLDS as f64)
}

/// Grid point with the lowest mean inner RMSE; near-ties go to the more
/// strongly regularised point, then to the earlier grid index.
pub fn inner_select(train: &FeatureMatrix, inner: &[usize], grid: &[Hyperparams], opts: &CvOptions) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::Selection("empty hyperparameter grid".into()));
    }
    if inner.len() != train.n_rows() {
        return Err(Error::Inconsistent("inner fold assignment does not match training rows".into()));
    }
    if grid.len() == 1 {
        return Ok(Selection { index: 0, hyperparams: grid[0].clone(), scores: vec![None] });
    }
    let scores: Vec<Option<f64>> = grid
        .par_iter()
        .map(|hp| match inner_score(train, inner, hp, opts) {
            Ok(s) if s.is_finite() => Some(s),
            Ok(_) => None,
            Err(e) => {
                debug!("grid point {} failed: {e}", hp.label());
                None
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores.iter().enumerate() {
        let Some(s) = *s else { continue };
        best = match best {
            None => Some((k, s)),
            Some((b, bs)) => {
                let tol = opts.tie_rel_tol * s.abs().max(bs.abs());
                if s < bs - tol {
                    Some((k, s))
                } else if (s - bs).abs() <= tol && grid[k].regularization_cmp(&grid[b]).is_gt() {
                    Some((k, s))
                } else {
                    Some((b, bs))
                }
            }
        };
    }
    let (index, _) = best.ok_or_else(|| Error::Selection(format!("all {} grid points failed to fit", grid.len())))?;
    Ok(Selection { index, hyperparams: grid[index].clone(), scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub hyperparams: Hyperparams,
    pub test_rmse: f64,
    /// Mean Poisson NLL on the test rows.
    pub test_nll: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub mean_predicted: f64,
    pub mean_observed: f64,
    pub inner_scores: Vec<Option<f64>>,
    pub test_zones: Vec<String>,
    /// Parameters learnt on the fold's training rows.
    pub standardization: StandardizationParams,
    pub summary: String,
    /// Wall-clock seconds; excluded from result files.
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub family: ModelFamily,
    pub features: String,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_rmse: f64,
    /// Sample standard deviation across the folds.
    pub sd_rmse: f64,
}

impl CvResult {
    pub fn test_rmses(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.test_rmse).collect()
    }

    fn summarise(rmses: &[f64]) -> (f64, f64) {
        (stats::mean(rmses), stats::sample_sd(rmses))
    }
}

fn run_fold(m: &FeatureMatrix, plan: &FoldPlan, j: usize, grid: &[Hyperparams], opts: &CvOptions) -> Result<FoldResult> {
    let start = Instant::now();
    let train_rows = plan.train_rows(j);
    let test_rows = plan.test_rows(j);
    let train = m.select_rows(&train_rows);
    let sel = inner_select(&train, &plan.inner_assignment(j), grid, opts)?;
    let (train_std, params) = standardize_fit(&train);
    let test = standardize_apply(&m.select_rows(&test_rows), &params)?;
    let model = fit_model(&train_std, &sel.hyperparams, &opts.enet)?;
    let pred = model.predict(&test)?;
    let test_rmse = rmse(test.target.as_slice(), pred.as_slice())?;
    let test_nll = poisson_nll(test.target.as_slice(), pred.as_slice(), opts.include_lgamma)?.value;
    info!("fold {}: {} -> rmse {test_rmse:.4}", j + 1, sel.hyperparams.label());
    Ok(FoldResult {
        fold: j,
        test_rmse,
        test_nll,
        n_train: train_rows.len(),
        n_test: test_rows.len(),
        mean_predicted: stats::mean(pred.as_slice()),
        mean_observed: stats::mean(test.target.as_slice()),
        inner_scores: sel.scores,
        test_zones: test.zone_ids.clone(),
        standardization: params,
        summary: summary_report(&model, &sel.hyperparams),
        hyperparams: sel.hyperparams,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Nested cross-validation of one model family on one feature set.
pub fn run_experiment(
    m: &FeatureMatrix,
    features: &str,
    grid: &[Hyperparams],
    seed: u64,
    opts: &CvOptions,
) -> Result<CvResult> {
    let family = grid.first().ok_or_else(|| Error::Selection("empty hyperparameter grid".into()))?.family();
    if grid.iter().any(|h| h.family() != family) {
        return Err(Error::Config("grid mixes model families".into()));
    }
    let freq: Vec<f64> = m.target.iter().zip(m.offset.iter()).map(|(y, o)| y / o.exp()).collect();
    let plan = make_fold_plan_from(m.zone_ids.clone(), &freq, seed, opts.strat_bins)?;
    run_with_plan(m, features, grid, &plan, opts)
}

/// As [`run_experiment`] with a prepared plan.
pub fn run_with_plan(m: &FeatureMatrix, features: &str, grid: &[Hyperparams], plan: &FoldPlan, opts: &CvOptions) -> Result<CvResult> {
    let family = grid.first().ok_or_else(|| Error::Selection("empty hyperparameter grid".into()))?.family();
    if plan.zone_ids != m.zone_ids {
        return Err(Error::Inconsistent("fold plan zones differ from matrix rows".into()));
    }
    let folds = (0..OUTER_FOLDS)
        .into_par_iter()
        .map(|j| run_fold(m, plan, j, grid, opts).map_err(|e| Error::Fold { fold: j + 1, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    let rmses: Vec<f64> = folds.iter().map(|f| f.test_rmse).collect();
    let (mean_rmse, sd_rmse) = CvResult::summarise(&rmses);
    Ok(CvResult { family, features: features.to_string(), seed: plan.seed, folds, mean_rmse, sd_rmse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub family: ModelFamily,
    pub features: String,
    pub results: Vec<CvResult>,
    /// Average over seeds of the per-seed mean RMSE.
    pub avg_mean_rmse: f64,
    /// Average over seeds of the per-seed RMSE standard deviation.
    pub avg_sd_rmse: f64,
}

impl RobustnessReport {
    pub fn seeds(&self) -> Vec<u64> {
        self.results.iter().map(|r| r.seed).collect()
    }
}

/// Repeats [`run_experiment`] for each seed.
pub fn robustness_suite(
    m: &FeatureMatrix,
    features: &str,
    grid: &[Hyperparams],
    seeds: &[u64],
    opts: &CvOptions,
) -> Result<RobustnessReport> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("robustness needs at least 2 seeds, got {}", seeds.len())));
    }
    let results = seeds
        .iter()
        .map(|&s| run_experiment(m, features, grid, s, opts).map_err(|e| Error::Seed { seed: s, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = results.iter().map(|r| r.mean_rmse).collect();
    let sds: Vec<f64> = results.iter().map(|r| r.sd_rmse).collect();
    Ok(RobustnessReport {
        family: results[0].family,
        features: features.to_string(),
        avg_mean_rmse: stats::mean(&means),
        avg_sd_rmse: stats::mean(&sds),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_zones, SynthConfig};

    fn noise(seed: u64, n: usize) -> FeatureMatrix {
        let cfg = SynthConfig { n_zones: n, beta: vec![0.13f64.ln(), 0.0, 0.0, 0.0], seed, ..Default::default() };
        generate_zones(&cfg).unwrap().1
    }

    #[test]
    fn singleton_grid_needs_no_fit() {
        let m = noise(1, 30);
        let hp = Hyperparams::GlmEnet { eta: 1e9, alpha: 3.0 };
        let s = inner_select(&m, &vec![0; 30], std::slice::from_ref(&hp), &CvOptions::default()).unwrap();
        assert_eq!(s.hyperparams, hp);
    }

    #[test]
    fn ties_go_to_stronger_regularisation() {
        let m = noise(2, 60);
        let inner: Vec<usize> = (0..60).map(|i| i % 5).collect();
        // Both points zero every slope, so their scores are identical.
        let grid = [Hyperparams::GlmEnet { eta: 1e6, alpha: 1.0 }, Hyperparams::GlmEnet { eta: 1e7, alpha: 1.0 }];
        let s = inner_select(&m, &inner, &grid, &CvOptions::default()).unwrap();
        assert_eq!(s.scores[0], s.scores[1]);
        assert_eq!(s.index, 1);
    }

    #[test]
    fn noise_features_prefer_heavy_penalty() {
        let m = noise(3, 300);
        let inner: Vec<usize> = (0..300).map(|i| i % 5).collect();
        let grid = [Hyperparams::GlmEnet { eta: 0.0, alpha: 1.0 }, Hyperparams::GlmEnet { eta: 1e6, alpha: 1.0 }];
        let s = inner_select(&m, &inner, &grid, &CvOptions::default()).unwrap();
        assert_eq!(s.index, 1);
    }

    #[test]
    fn experiment_shape_and_recomputation() {
        let m = noise(4, 60);
        let r = run_experiment(&m, "base", &[Hyperparams::Glm], 7, &CvOptions::default()).unwrap();
        assert_eq!(r.folds.len(), 6);
        let rm = r.test_rmses();
        assert!((stats::mean(&rm) - r.mean_rmse).abs() <= 1e-12);
        assert!((stats::sample_sd(&rm) - r.sd_rmse).abs() <= 1e-12);
        assert_eq!(r.folds.iter().map(|f| f.n_test).sum::<usize>(), 60);
    }

    #[test]
    fn robustness_averages() {
        let m = noise(5, 60);
        let rep = robustness_suite(&m, "base", &[Hyperparams::Glm], &[1, 2, 3], &CvOptions::default()).unwrap();
        let means: Vec<f64> = rep.results.iter().map(|r| r.mean_rmse).collect();
        assert!((rep.avg_mean_rmse - stats::mean(&means)).abs() <= 1e-12);
        assert!(robustness_suite(&m, "base", &[Hyperparams::Glm], &[1], &CvOptions::default()).is_err());
    }

    #[test]
    fn mixed_grid_rejected() {
        let m = noise(6, 30);
        let grid = [Hyperparams::Glm, Hyperparams::GlmEnet { eta: 0.1, alpha: 1.0 }];
        assert!(run_experiment(&m, "base", &grid, 1, &CvOptions::default()).is_err());
    }
}
