//! `geofreq` command-line driver.

mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geofreq::aggregate::{aggregate_zones, ZoneTable};
use geofreq::eval::report::{
    cv_table, robustness_table, write_cv_csv, write_folds_csv, write_robustness_csv, write_timings_csv,
};
use geofreq::eval::{robustness_suite, run_experiment, CvOptions, CvResult};
use geofreq::features::{assemble, load_embeddings, parse_blocks, Block, BlockSources};
use geofreq::geo::layer::{read_geojson_layers, ROAD_TAG};
use geofreq::geo::env::POINT_TAGS;
use geofreq::geo::{
    coverage_ratio, mask_by_landcover, read_esri_ascii, EnvTable, FeatureLayer, GeoPoint, Lambert72, Lambert72Config,
    LayerKind, LayerSet, Radius,
};
use geofreq::ingest::{filter_max_claims, parse_policies, write_policies};
use geofreq::synth::{generate_policies, generate_zones};
use log::{info, warn};

use config::{optional_file, require_file, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or a missing input; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] geofreq::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Run(geofreq::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "geofreq", version, about = "Zone-level claim-frequency modelling with geographic features")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment / synthetic seed. For `robustness` the seed
    /// list becomes N, N+1, ... with the configured length.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Abort on the first malformed policy row.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads.
    #[arg(long, global = true, env = "GEOFREQ_JOBS")]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Parse policies, drop rows above the claim cap and write the zone table.
    Aggregate,
    /// Built-environment metrics per zone for each configured radius.
    Geo,
    /// Nested cross-validation for each configured feature set.
    Experiment,
    /// Cross-validation repeated over the configured seeds.
    Robustness,
    /// Synthetic policies and zones with known coefficients.
    Synth,
    /// Share of each postcode's area covered by the neighbourhoods.
    Coverage,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Aggregate => "aggregate",
            Command::Geo => "geo",
            Command::Experiment => "experiment",
            Command::Robustness => "robustness",
            Command::Synth => "synth",
            Command::Coverage => "coverage",
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))
}

/// Writes through a buffer and flushes; one writer per file.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(format!("cannot create {}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(io_err(format!("cannot write {}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_file(path, |w| w.write_all(text.as_bytes()).map_err(io_err(format!("cannot write {}", path.display()))))
}

fn resolve(args: &GlobalArgs, cmd: Command) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { paths: config::Paths { out: PathBuf::from("out"), ..Default::default() }, ..Default::default() },
    };
    if let Some(out) = &args.out {
        cfg.paths.out = out.clone();
    }
    if args.strict {
        cfg.ingest.strict = true;
    }
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
        match cmd {
            Command::Robustness => {
                let n = cfg.experiment.seeds.len().max(2) as u64;
                cfg.experiment.seeds = (seed..seed + n).collect();
            }
            _ => cfg.experiment.seeds = vec![seed],
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn projection(cfg: &RunConfig) -> CliResult<Lambert72> {
    let mut p = Lambert72Config { permissive: cfg.geo.permissive, ..Default::default() };
    if !cfg.geo.datum_shift {
        p.to_wgs84 = None;
    }
    Ok(Lambert72::new(p)?)
}

fn read_zones(cfg: &RunConfig) -> CliResult<ZoneTable> {
    let path = cfg.zones_path();
    if !path.is_file() {
        return Err(CliError::Config(format!("zone table {} does not exist", path.display())));
    }
    Ok(ZoneTable::read_csv(open(&path)?)?)
}

fn cmd_aggregate(cfg: &RunConfig) -> CliResult<()> {
    let input = require_file(&cfg.paths.policies, "policies")?;
    let opts = cfg.ingest.parse_options()?;
    let table = parse_policies(open(&input)?, &cfg.schema, &opts)?;
    info!("read {} rows, kept {}, rejected {}", table.rows_read, table.len(), table.rejected.len());
    for issue in table.rejected.iter().take(20) {
        warn!("line {}: {}", issue.line, issue.message);
    }
    let kept = filter_max_claims(&table, cfg.ingest.max_claims);
    info!("{} policies with at most {} claims", kept.len(), cfg.ingest.max_claims);
    let zones = aggregate_zones(&kept.records)?;
    info!("{} zones", zones.len());
    let out = cfg.paths.zones.clone().unwrap_or_else(|| cfg.paths.out.join("zones.csv"));
    write_file(&out, |w| Ok(zones.write_csv(w)?))?;
    write_file(&cfg.paths.out.join("ingest_rejected.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["line", "message"]).map_err(geofreq::Error::from)?;
        for r in &table.rejected {
            c.write_record([r.line.to_string(), r.message.clone()]).map_err(geofreq::Error::from)?;
        }
        c.flush().map_err(io_err("cannot write rejection report"))
    })
}

fn load_layers(cfg: &RunConfig, proj: &Lambert72) -> CliResult<LayerSet> {
    let Some(path) = optional_file(&cfg.paths.layers, "layers")? else {
        warn!("no layers configured; every metric is zero");
        return Ok(LayerSet::empty());
    };
    let mut layers = read_geojson_layers(open(&path)?, cfg.geo.layer_crs, proj)?;
    if let Some(grid_path) = optional_file(&cfg.paths.landcover, "landcover")? {
        let grid = read_esri_ascii(open(&grid_path)?, None)?;
        let keep = cfg.geo.keep_codes.iter().copied().collect();
        for layer in layers.values_mut() {
            let before = layer.len();
            let m = mask_by_landcover(layer, &grid, &keep);
            info!("mask {}: {} -> {} features, {} outside the raster", layer.tag, before, m.layer.len(), m.dropped_outside);
            *layer = m.layer;
        }
    }
    if !layers.contains_key(ROAD_TAG) {
        warn!("layer {ROAD_TAG:?} absent; treated as empty");
        layers.insert(ROAD_TAG.into(), FeatureLayer::empty(ROAD_TAG, LayerKind::Polyline));
    }
    for tag in POINT_TAGS {
        if !layers.contains_key(tag) {
            warn!("layer {tag:?} absent; treated as empty");
            layers.insert(tag.into(), FeatureLayer::empty(tag, LayerKind::Point));
        }
    }
    Ok(LayerSet::new(layers)?)
}

fn env_file(dir: &Path, r: Radius) -> PathBuf {
    dir.join(format!("env_r{}.csv", r.label()))
}

fn cmd_geo(cfg: &RunConfig) -> CliResult<()> {
    let zones = read_zones(cfg)?;
    let proj = projection(cfg)?;
    let layers = load_layers(cfg, &proj)?;
    let centers = zones
        .zones
        .iter()
        .map(|z| Ok((z.postcode.clone(), GeoPoint::new(z.lat, z.long)?)))
        .collect::<geofreq::Result<Vec<_>>>()?;
    for &r in &cfg.geo.radii {
        let table = EnvTable::compute(&centers, r, &layers, &proj)?;
        write_file(&env_file(&cfg.paths.out, r), |w| Ok(table.write_csv(w)?))?;
        write_file(&cfg.paths.out.join(format!("env_totals_r{}.csv", r.label())), |w| Ok(table.write_totals_csv(w)?))?;
    }
    Ok(())
}

/// Loads only the sources the requested blocks need.
fn block_sources(cfg: &RunConfig, blocks: &[Block]) -> CliResult<BlockSources> {
    let mut radii: Vec<Radius> = Vec::new();
    for b in blocks {
        match b {
            Block::Osm(r) => radii.push(*r),
            Block::OsmAll => radii.extend(Radius::ALL),
            _ => {}
        }
    }
    let mut env = BTreeMap::new();
    for r in radii {
        let path = env_file(&cfg.env_dir(), r);
        if !path.is_file() {
            return Err(CliError::Config(format!("{} does not exist; run `geofreq geo` first", path.display())));
        }
        env.insert(r, EnvTable::read_csv(open(&path)?, r)?);
    }
    let embeddings = if blocks.contains(&Block::Embeddings) {
        let path = require_file(&cfg.paths.embeddings, "embeddings")?;
        let src = cfg.experiment.embedding_source;
        let dim = cfg.experiment.embedding_dim.unwrap_or(src.default_dim());
        Some(load_embeddings(open(&path)?, dim, src)?)
    } else {
        None
    };
    Ok(BlockSources { env, embeddings })
}

fn cv_options(cfg: &RunConfig) -> CvOptions {
    CvOptions {
        strat_bins: cfg.experiment.strat_bins,
        enet: cfg.experiment.enet,
        include_lgamma: cfg.experiment.include_lgamma,
        ..Default::default()
    }
}

fn summaries(results: &[CvResult]) -> String {
    let mut s = String::new();
    for r in results {
        for f in &r.folds {
            s.push_str(&format!("== {} {} seed {} fold {} ==\n{}\n", r.family, r.features, r.seed, f.fold + 1, f.summary));
        }
    }
    s
}

fn write_cv_outputs(cfg: &RunConfig, prefix: &str, results: &[CvResult]) -> CliResult<()> {
    let out = &cfg.paths.out;
    write_file(&out.join(format!("{prefix}.csv")), |w| Ok(write_cv_csv(results, w)?))?;
    write_file(&out.join(format!("{prefix}_folds.csv")), |w| Ok(write_folds_csv(results, w)?))?;
    write_text(&out.join(format!("{prefix}_summaries.txt")), &summaries(results))?;
    if cfg.experiment.write_timings {
        write_file(&out.join(format!("{prefix}_timings.csv")), |w| Ok(write_timings_csv(results, w)?))?;
    }
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig) -> CliResult<()> {
    let zones = read_zones(cfg)?;
    let seed = cfg.experiment.seeds.first().copied().ok_or_else(|| CliError::Config("experiment.seeds is empty".into()))?;
    let opts = cv_options(cfg);
    let mut results = Vec::new();
    for spec in &cfg.experiment.features {
        let blocks = parse_blocks(spec)?;
        let m = assemble(&zones, &blocks, &block_sources(cfg, &blocks)?)?;
        info!("{spec}: {} zones x {} columns", m.n_rows(), m.n_cols());
        let r = run_experiment(&m, spec, &cfg.experiment.grid_for(seed), seed, &opts)?;
        info!("{spec}: mean rmse {:.4}, sd {:.4}", r.mean_rmse, r.sd_rmse);
        results.push(r);
    }
    write_cv_outputs(cfg, "cv_results", &results)?;
    let table = cv_table(&results);
    print!("{table}");
    write_text(&cfg.paths.out.join("cv_results_table.txt"), &table)
}

fn cmd_robustness(cfg: &RunConfig) -> CliResult<()> {
    let zones = read_zones(cfg)?;
    let opts = cv_options(cfg);
    let seeds = &cfg.experiment.seeds;
    let mut reports = Vec::new();
    for spec in &cfg.experiment.features {
        let blocks = parse_blocks(spec)?;
        let m = assemble(&zones, &blocks, &block_sources(cfg, &blocks)?)?;
        let grid = cfg.experiment.grid_for(seeds.first().copied().unwrap_or(0));
        let r = robustness_suite(&m, spec, &grid, seeds, &opts)?;
        info!("{spec}: avg mean rmse {:.4}, avg sd {:.4}", r.avg_mean_rmse, r.avg_sd_rmse);
        reports.push(r);
    }
    write_file(&cfg.paths.out.join("robustness.csv"), |w| Ok(write_robustness_csv(&reports, w)?))?;
    let all: Vec<CvResult> = reports.iter().flat_map(|r| r.results.iter().cloned()).collect();
    write_cv_outputs(cfg, "robustness_runs", &all)?;
    let table = robustness_table(&reports);
    print!("{table}");
    write_text(&cfg.paths.out.join("robustness_table.txt"), &table)
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let (zones, _, beta) = generate_zones(&cfg.synth)?;
    let policies = generate_policies(&cfg.synth)?;
    let opts = cfg.ingest.parse_options()?;
    let out = &cfg.paths.out;
    write_file(&out.join("synth_policies.csv"), |w| Ok(write_policies(&policies, w, &cfg.schema, &opts)?))?;
    write_file(&out.join("synth_zones.csv"), |w| Ok(zones.write_csv(w)?))?;
    let mut names = vec!["intercept".to_string()];
    names.extend(cfg.synth.feature_names());
    let mut text = String::from("term,beta\n");
    for (n, b) in names.iter().zip(&beta) {
        text.push_str(&format!("{n},{b}\n"));
    }
    write_text(&out.join("synth_beta.csv"), &text)?;
    info!("{} zones, {} policies", zones.len(), policies.len());
    Ok(())
}

fn cmd_coverage(cfg: &RunConfig) -> CliResult<()> {
    let path = require_file(&cfg.paths.areas, "areas")?;
    let mut r = csv::Reader::from_reader(open(&path)?);
    let header = r.headers().map_err(geofreq::Error::from)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Run(geofreq::Error::Schema(format!("area table lacks column {name:?}"))))
    };
    let (pc, area) = (col("postcode")?, col("area_km2")?);
    let mut areas = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(geofreq::Error::from)?;
        let line = rec.position().map_or(0, |p| p.line());
        let a: f64 = rec[area].trim().parse().map_err(|_| geofreq::Error::Row {
            line,
            message: format!("unparseable area_km2 {:?}", &rec[area]),
        })?;
        if areas.insert(rec[pc].trim().to_string(), a).is_some() {
            return Err(geofreq::Error::DuplicateZone(rec[pc].to_string()).into());
        }
    }
    let hoods = &cfg.coverage.neighborhoods;
    let mut sums = vec![0.0; hoods.len()];
    let mut text = String::from("postcode,area_km2");
    for h in hoods {
        text.push(',');
        text.push_str(&h.label());
    }
    text.push('\n');
    for (p, a) in &areas {
        text.push_str(&format!("{p},{a}"));
        for (k, h) in hoods.iter().enumerate() {
            let v = coverage_ratio(*h, *a)?;
            sums[k] += v;
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write_text(&cfg.paths.out.join("coverage.csv"), &text)?;
    let mut summary = String::from("neighborhood,area_km2,mean_ratio\n");
    for (h, s) in hoods.iter().zip(&sums) {
        let mean = if areas.is_empty() { f64::NAN } else { s / areas.len() as f64 };
        summary.push_str(&format!("{},{},{mean}\n", h.label(), h.area_km2()));
        info!("{}: mean coverage {:.2}%", h.label(), 100.0 * mean);
    }
    write_text(&cfg.paths.out.join("coverage_summary.csv"), &summary)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli.global, cli.command)?;
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
    }
    fs::create_dir_all(&cfg.paths.out).map_err(io_err(format!("cannot create {}", cfg.paths.out.display())))?;
    write_text(&cfg.paths.out.join(format!("resolved_{}.toml", cli.command.name())), &cfg.to_toml()?)?;
    match cli.command {
        Command::Aggregate => cmd_aggregate(&cfg),
        Command::Geo => cmd_geo(&cfg),
        Command::Experiment => cmd_experiment(&cfg),
        Command::Robustness => cmd_robustness(&cfg),
        Command::Synth => cmd_synth(&cfg),
        Command::Coverage => cmd_coverage(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
