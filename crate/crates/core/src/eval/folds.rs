//! Frequency-stratified outer and inner fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::ZoneTable;
use crate::error::{Error, Result};

pub const OUTER_FOLDS: usize = 6;
pub const INNER_FOLDS: usize = 5;
pub const DEFAULT_STRAT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub strat_bins: usize,
    pub stratify_by: String,
    pub zone_ids: Vec<String>,
    /// Outer fold of each zone.
    pub outer: Vec<usize>,
    /// Per outer fold: inner fold of each zone, `None` for that fold's test zones.
    pub inner: Vec<Vec<Option<usize>>>,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.outer.len()).filter(|&i| self.outer[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.outer.len()).filter(|&i| self.outer[i] != fold).collect()
    }

    /// Inner folds of the training rows of `fold`, aligned with [`FoldPlan::train_rows`].
    pub fn inner_assignment(&self, fold: usize) -> Vec<usize> {
        self.inner[fold].iter().filter_map(|f| *f).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; OUTER_FOLDS];
        for &f in &self.outer {
            s[f] += 1;
        }
        s
    }
}

/// Ranks `values` (ties by position), cuts the ranking into `bins` equal
/// quantile bins, shuffles inside each bin and deals rows round-robin to
/// `k` folds with one counter running across bins.
pub fn stratified_assignment(values: &[f64], k: usize, bins: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let bins = bins.clamp(1, n.max(1));
    let mut fold = vec![0; n];
    let mut counter = 0;
    for b in 0..bins {
        let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
        let mut members = order[lo..hi].to_vec();
        members.shuffle(rng);
        for i in members {
            fold[i] = counter % k;
            counter += 1;
        }
    }
    fold
}

/// Plan over rows with the given stratification values.
pub fn make_fold_plan_from(zone_ids: Vec<String>, strat: &[f64], seed: u64, strat_bins: usize) -> Result<FoldPlan> {
    let n = strat.len();
    if n < OUTER_FOLDS {
        return Err(Error::Config(format!("need at least {OUTER_FOLDS} zones for the outer folds, got {n}")));
    }
    if strat_bins == 0 {
        return Err(Error::Config("strat_bins must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let outer = stratified_assignment(strat, OUTER_FOLDS, strat_bins, &mut rng);
    let mut inner = Vec::with_capacity(OUTER_FOLDS);
    for j in 0..OUTER_FOLDS {
        let train: Vec<usize> = (0..n).filter(|&i| outer[i] != j).collect();
        if train.len() < INNER_FOLDS {
            return Err(Error::Config(format!("outer fold {j} leaves fewer than {INNER_FOLDS} training zones")));
        }
        let vals: Vec<f64> = train.iter().map(|&i| strat[i]).collect();
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        r.set_stream(j as u64 + 1);
        let a = stratified_assignment(&vals, INNER_FOLDS, strat_bins, &mut r);
        let mut col = vec![None; n];
        for (t, &i) in train.iter().enumerate() {
            col[i] = Some(a[t]);
        }
        inner.push(col);
    }
    Ok(FoldPlan { seed, strat_bins, stratify_by: "freq".into(), zone_ids, outer, inner })
}

/// Stratifies on zone claim frequency.
pub fn make_fold_plan(zones: &ZoneTable, seed: u64, strat_bins: usize) -> Result<FoldPlan> {
    let freq: Vec<f64> = zones.zones.iter().map(|z| z.freq).collect();
    make_fold_plan_from(zones.zones.iter().map(|z| z.postcode.clone()).collect(), &freq, seed, strat_bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(n: usize, seed: u64) -> FoldPlan {
        let ids = (0..n).map(|i| i.to_string()).collect();
        let freq: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        make_fold_plan_from(ids, &freq, seed, DEFAULT_STRAT_BINS).unwrap()
    }

    #[test]
    fn balanced_sizes() {
        assert_eq!(plan(12, 3).fold_sizes(), vec![2; 6]);
        let mut s = plan(583, 5).fold_sizes();
        s.sort();
        assert_eq!(s, [97, 97, 97, 97, 97, 98]);
    }

    #[test]
    fn inner_folds_partition_training_zones() {
        let p = plan(100, 1);
        for j in 0..OUTER_FOLDS {
            for i in 0..100 {
                assert_eq!(p.inner[j][i].is_none(), p.outer[i] == j);
            }
            let a = p.inner_assignment(j);
            assert_eq!(a.len(), p.train_rows(j).len());
            let mut sizes = [0usize; INNER_FOLDS];
            for f in a {
                sizes[f] += 1;
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn per_stratum_balance() {
        let n = 200;
        let freq: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let a = stratified_assignment(&freq, 6, 10, &mut rng);
        for b in 0..10 {
            let mut c = [0usize; 6];
            for i in b * 20..(b + 1) * 20 {
                c[a[i]] += 1;
            }
            assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(plan(60, 8), plan(60, 8));
        assert_ne!(plan(60, 8).outer, plan(60, 9).outer);
    }

    #[test]
    fn too_few_zones() {
        assert!(make_fold_plan_from(vec!["a".into(); 5], &[0.0; 5], 1, 10).is_err());
    }
}
