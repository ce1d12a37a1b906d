use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_geofreq");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).env_remove("GEOFREQ_JOBS").output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Small synthetic workspace: config, policies and zones under `dir`.
fn workspace(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"
[paths]
policies = "out/synth_policies.csv"
zones = "out/zones.csv"
out = "out"

[synth]
n_zones = 48
seed = 9

[experiment]
family = "glm"
seeds = [1, 2]
{extra}
"#
    );
    fs::write(dir.path().join("geofreq.toml"), cfg).unwrap();
    ok(dir.path(), &["--config", "geofreq.toml", "synth"]);
    dir
}

fn data_rows(text: &str) -> usize {
    text.lines().count() - 1
}

#[test]
fn missing_input_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[paths]\npolicies = \"nowhere.csv\"\nout = \"out\"\n").unwrap();
    let o = run(dir.path(), &["--config", "c.toml", "aggregate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nowhere.csv"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[experiment]\nfamly = \"glm\"\n").unwrap();
    assert_eq!(run(dir.path(), &["--config", "c.toml", "synth"]).status.code(), Some(2));
}

#[test]
fn synth_aggregate_experiment_pipeline() {
    let ws = workspace("");
    let d = ws.path();
    let out = d.join("out");
    assert_eq!(data_rows(&read(out.join("synth_zones.csv"))), 48);
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    assert_eq!(data_rows(&read(out.join("zones.csv"))), 48);
    assert_eq!(data_rows(&read(out.join("ingest_rejected.csv"))), 0);

    let o = ok(d, &["--config", "geofreq.toml", "experiment"]);
    let cv = read(out.join("cv_results.csv"));
    let mut lines = cv.lines();
    assert_eq!(lines.next().unwrap(), "model,features,seed,fold_1,fold_2,fold_3,fold_4,fold_5,fold_6,mean,std");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["glm", "base", "1"]);
    let folds: Vec<f64> = row[3..9].iter().map(|v| v.parse().unwrap()).collect();
    let mean: f64 = row[9].parse().unwrap();
    assert!((folds.iter().sum::<f64>() / 6.0 - mean).abs() < 1e-12);
    assert_eq!(data_rows(&read(out.join("cv_results_folds.csv"))), 6);
    assert!(!out.join("cv_results_timings.csv").exists());
    let table = read(out.join("cv_results_table.txt"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    assert!(read(out.join("resolved_experiment.toml")).contains("[experiment]"));
}

#[test]
fn reruns_are_byte_identical() {
    let ws = workspace("");
    let d = ws.path();
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    ok(d, &["--config", "geofreq.toml", "experiment"]);
    let names = ["synth_policies.csv", "zones.csv", "cv_results.csv", "cv_results_folds.csv", "cv_results_summaries.txt"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(d.join("out").join(n)).unwrap()).collect();
    ok(d, &["--config", "geofreq.toml", "synth"]);
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    let o = Command::new(BIN).current_dir(d).args(["--config", "geofreq.toml", "experiment"]).env("GEOFREQ_JOBS", "1").output().unwrap();
    assert!(o.status.success());
    for (n, bytes) in names.iter().zip(first) {
        assert_eq!(fs::read(d.join("out").join(n)).unwrap(), bytes, "{n} changed");
    }
}

#[test]
fn geo_without_layers_writes_zero_features() {
    let ws = workspace("");
    let d = ws.path();
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    ok(d, &["--config", "geofreq.toml", "geo"]);
    for label in ["0.5", "1", "3", "5"] {
        let text = read(d.join("out").join(format!("env_r{label}.csv")));
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(header[0], "postcode");
        assert!(header[1..].iter().all(|h| h.ends_with(&format!("_r{label}"))), "{header:?}");
        assert_eq!(data_rows(&text), 48);
        for line in text.lines().skip(1) {
            assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
        }
        assert!(d.join("out").join(format!("env_totals_r{label}.csv")).is_file());
    }
    // The zero features are constant columns and must not break a fit.
    ok(d, &["--config", "geofreq.toml", "experiment"]);
    fs::write(
        d.join("g.toml"),
        read(d.join("geofreq.toml")).replace("seeds = [1, 2]", "seeds = [1, 2]\nfeatures = [\"base+osm_r1\"]"),
    )
    .unwrap();
    ok(d, &["--config", "g.toml", "experiment"]);
    assert!(read(d.join("out").join("cv_results.csv")).contains("base+osm_r1"));
}

#[test]
fn experiment_needs_the_env_tables_it_uses() {
    let ws = workspace("features = [\"base+osm_r3\"]");
    let d = ws.path();
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    let o = run(d, &["--config", "geofreq.toml", "experiment"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("env_r3.csv"));
}

#[test]
fn robustness_reports_averages_over_seeds() {
    let ws = workspace("");
    let d = ws.path();
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    ok(d, &["--config", "geofreq.toml", "--seed", "11", "robustness"]);
    let out = d.join("out");
    let text = read(out.join("robustness.csv"));
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"avg_mean") && header.contains(&"avg_std"), "{header:?}");
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[header.iter().position(|h| *h == "seeds").unwrap()], "11;12");
    let runs = read(out.join("robustness_runs.csv"));
    let means: Vec<f64> = runs.lines().skip(1).map(|l| l.split(',').nth(9).unwrap().parse().unwrap()).collect();
    assert_eq!(means.len(), 2);
    let avg: f64 = row[header.iter().position(|h| *h == "avg_mean").unwrap()].parse().unwrap();
    assert!((avg - (means[0] + means[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn robustness_needs_two_seeds() {
    let ws = workspace("");
    let d = ws.path();
    ok(d, &["--config", "geofreq.toml", "aggregate"]);
    fs::write(d.join("one.toml"), read(d.join("geofreq.toml")).replace("seeds = [1, 2]", "seeds = [4]")).unwrap();
    assert!(!run(d, &["--config", "one.toml", "robustness"]).status.success());
}

#[test]
fn coverage_ratios_are_capped_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("areas.csv"), "postcode,area_km2\n1000,2.0\n9990,400\n").unwrap();
    fs::write(d.join("c.toml"), "[paths]\nareas = \"areas.csv\"\nout = \"out\"\n").unwrap();
    ok(d, &["--config", "c.toml", "coverage"]);
    let text = read(d.join("out/coverage.csv"));
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 7);
    let small: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert!(small.iter().all(|v| *v > 0.0 && *v <= 1.0));
    assert_eq!(small[header.iter().position(|h| *h == "disc_r5").unwrap() - 2], 1.0);
    let big: Vec<f64> = text.lines().nth(2).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert!((big[0] - std::f64::consts::PI * 0.25 / 400.0).abs() < 1e-15);
    assert_eq!(data_rows(&read(d.join("out/coverage_summary.csv"))), 7);
}

#[test]
fn jobs_must_be_positive() {
    let ws = workspace("");
    let o = Command::new(BIN).current_dir(ws.path()).args(["--config", "geofreq.toml", "synth"]).env("GEOFREQ_JOBS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
