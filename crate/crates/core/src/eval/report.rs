//! Delimited and plain-text renderings of cross-validation results.

use std::fmt::Write as _;
use std::io::Write;

use super::cv::{CvResult, RobustnessReport};
use super::folds::OUTER_FOLDS;
use crate::error::Result;

fn fold_header() -> Vec<String> {
    (1..=OUTER_FOLDS).map(|k| format!("fold_{k}")).collect()
}

/// One row per result: per-fold test RMSEs, mean and standard deviation.
pub fn write_cv_csv<W: Write>(results: &[CvResult], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["model".to_string(), "features".into(), "seed".into()];
    header.extend(fold_header());
    header.extend(["mean".to_string(), "std".into()]);
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.family.to_string(), r.features.clone(), r.seed.to_string()];
        row.extend(r.folds.iter().map(|f| f.test_rmse.to_string()));
        row.extend([r.mean_rmse.to_string(), r.sd_rmse.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per outer fold with the selected hyperparameters.
pub fn write_folds_csv<W: Write>(results: &[CvResult], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "model",
        "features",
        "seed",
        "fold",
        "n_train",
        "n_test",
        "test_rmse",
        "test_nll",
        "mean_predicted",
        "mean_observed",
        "hyperparams",
    ])?;
    for r in results {
        for f in &r.folds {
            w.write_record([
                r.family.to_string(),
                r.features.clone(),
                r.seed.to_string(),
                (f.fold + 1).to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                f.test_rmse.to_string(),
                f.test_nll.to_string(),
                f.mean_predicted.to_string(),
                f.mean_observed.to_string(),
                f.hyperparams.label(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(results: &[CvResult], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["model", "features", "seed", "fold", "runtime_secs"])?;
    for r in results {
        for f in &r.folds {
            w.write_record([
                r.family.to_string(),
                r.features.clone(),
                r.seed.to_string(),
                (f.fold + 1).to_string(),
                format!("{:.3}", f.runtime_secs),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (k, c) in r.iter().enumerate() {
            width[k] = width[k].max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(k, c)| if k < 2 { format!("{c:<w$}", w = width[k]) } else { format!("{c:>w$}", w = width[k]) })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut s = String::new();
    let _ = writeln!(s, "{}", line(header));
    let _ = writeln!(s, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    for r in rows {
        let _ = writeln!(s, "{}", line(r));
    }
    s
}

/// Per-fold columns, Mean and std, four decimals.
pub fn cv_table(results: &[CvResult]) -> String {
    let mut header = vec!["Model".to_string(), "Features".into()];
    header.extend((1..=OUTER_FOLDS).map(|k| format!("Fold {k}")));
    header.extend(["Mean".to_string(), "std".into()]);
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut row = vec![r.family.to_string(), r.features.clone()];
            row.extend(r.folds.iter().map(|f| format!("{:.4}", f.test_rmse)));
            row.extend([format!("{:.4}", r.mean_rmse), format!("{:.4}", r.sd_rmse)]);
            row
        })
        .collect();
    render(&header, &rows)
}

/// One row per report: mean and std of each split configuration, then
/// their averages.
pub fn write_robustness_csv<W: Write>(reports: &[RobustnessReport], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let n = reports.iter().map(|r| r.results.len()).max().unwrap_or(0);
    let mut header = vec!["model".to_string(), "features".into(), "seeds".into()];
    for k in 1..=n {
        header.push(format!("exp_{k}_mean"));
        header.push(format!("exp_{k}_std"));
    }
    header.extend(["avg_mean".to_string(), "avg_std".into()]);
    w.write_record(&header)?;
    for r in reports {
        let seeds = r.seeds().iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        let mut row = vec![r.family.to_string(), r.features.clone(), seeds];
        for k in 0..n {
            match r.results.get(k) {
                Some(c) => row.extend([c.mean_rmse.to_string(), c.sd_rmse.to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.extend([r.avg_mean_rmse.to_string(), r.avg_sd_rmse.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn robustness_table(reports: &[RobustnessReport]) -> String {
    let n = reports.iter().map(|r| r.results.len()).max().unwrap_or(0);
    let mut header = vec!["Model".to_string(), "Features".into()];
    for k in 1..=n {
        header.push(format!("Exp {k} Mean"));
        header.push(format!("Exp {k} std"));
    }
    header.extend(["Avg Mean".to_string(), "Avg std".into()]);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.family.to_string(), r.features.clone()];
            for k in 0..n {
                match r.results.get(k) {
                    Some(c) => row.extend([format!("{:.4}", c.mean_rmse), format!("{:.4}", c.sd_rmse)]),
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row.extend([format!("{:.4}", r.avg_mean_rmse), format!("{:.4}", r.avg_sd_rmse)]);
            row
        })
        .collect();
    render(&header, &rows)
}
