//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use geofreq::eval::default_grid;
use geofreq::features::{parse_blocks, EmbeddingSource};
use geofreq::geo::landcover::artificial_surfaces;
use geofreq::geo::{LayerCrs, Neighborhood, Radius};
use geofreq::ingest::{ParseOptions, Schema};
use geofreq::models::{EnetOptions, Hyperparams, ModelFamily};
use geofreq::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Policy-level CSV read by `aggregate`.
    pub policies: Option<PathBuf>,
    /// Zone table; `aggregate` and `synth` write it to `out` when unset.
    pub zones: Option<PathBuf>,
    /// GeoJSON FeatureCollection with a `tag` property per feature.
    pub layers: Option<PathBuf>,
    /// ESRI ASCII land-cover raster in Lambert 72 metres.
    pub landcover: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// `postcode,area_km2` table for `coverage`.
    pub areas: Option<PathBuf>,
    /// Directory holding `env_r*.csv`; defaults to `out`.
    pub env_dir: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub delimiter: char,
    pub decimal_mark: char,
    pub strict: bool,
    pub max_claims: u32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { delimiter: ',', decimal_mark: '.', strict: false, max_claims: 3 }
    }
}

impl IngestConfig {
    pub fn parse_options(&self) -> Result<ParseOptions, CliError> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::Config(format!("delimiter {:?} is not ASCII", self.delimiter)));
        }
        Ok(ParseOptions { delimiter: self.delimiter as u8, decimal_mark: self.decimal_mark, strict: self.strict })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub radii: Vec<Radius>,
    pub layer_crs: LayerCrs,
    /// Project points outside the Belgian window instead of failing.
    pub permissive: bool,
    /// Apply the Belge 1972 to WGS84 datum shift.
    pub datum_shift: bool,
    /// Land-cover codes kept by the mask (artificial surfaces by default).
    pub keep_codes: Vec<u16>,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            radii: Radius::ALL.to_vec(),
            layer_crs: LayerCrs::Wgs84,
            permissive: false,
            datum_shift: true,
            keep_codes: artificial_surfaces().into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: ModelFamily,
    /// Feature sets such as `base+lat_long+osm_r5`.
    pub features: Vec<String>,
    pub seeds: Vec<u64>,
    /// Explicit grid; the family's declared default when empty.
    pub grid: Vec<Hyperparams>,
    pub strat_bins: usize,
    pub include_lgamma: bool,
    pub embedding_source: EmbeddingSource,
    /// Defaults to the source's native width.
    pub embedding_dim: Option<usize>,
    pub enet: EnetOptions,
    /// Also write per-fold wall-clock times (not reproducible byte for byte).
    pub write_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Glm,
            features: vec!["base".into()],
            seeds: vec![1, 2, 3, 4, 5],
            grid: Vec::new(),
            strat_bins: 10,
            include_lgamma: false,
            embedding_source: EmbeddingSource::Resnet18,
            embedding_dim: None,
            enet: EnetOptions::default(),
            write_timings: false,
        }
    }
}

impl ExperimentConfig {
    pub fn grid_for(&self, seed: u64) -> Vec<Hyperparams> {
        if self.grid.is_empty() {
            default_grid(self.family, seed)
        } else {
            self.grid.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub neighborhoods: Vec<Neighborhood>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        let mut neighborhoods: Vec<Neighborhood> =
            Radius::ALL.iter().map(|r| Neighborhood::Disc { radius_km: r.km() }).collect();
        // Image tiles of side 0.5, 1 and 3 km.
        neighborhoods.extend([0.25, 0.5, 1.5].map(|a| Neighborhood::Square { apothem_km: a }));
        Self { neighborhoods }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub schema: Schema,
    pub ingest: IngestConfig,
    pub geo: GeoConfig,
    pub experiment: ExperimentConfig,
    pub synth: SynthConfig,
    pub coverage: CoverageConfig,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(v) = p {
        if v.is_relative() {
            *v = base.join(&*v);
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.policies, &mut p.zones, &mut p.layers, &mut p.landcover, &mut p.embeddings, &mut p.areas, &mut p.env_dir] {
            rebase(base, slot);
        }
        if p.out.as_os_str().is_empty() {
            p.out = PathBuf::from("out");
        }
        if p.out.is_relative() {
            p.out = base.join(&p.out);
        }
        Ok(cfg)
    }

    pub fn env_dir(&self) -> PathBuf {
        self.paths.env_dir.clone().unwrap_or_else(|| self.paths.out.clone())
    }

    /// Zone table location: explicit path, else `out/zones.csv`.
    pub fn zones_path(&self) -> PathBuf {
        self.paths.zones.clone().unwrap_or_else(|| self.paths.out.join("zones.csv"))
    }

    /// Checks the settings every subcommand relies on.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.geo.radii.is_empty() {
            return Err(CliError::Config("geo.radii is empty".into()));
        }
        for (i, r) in self.geo.radii.iter().enumerate() {
            if self.geo.radii[..i].contains(r) {
                return Err(CliError::Config(format!("radius {r} listed twice")));
            }
        }
        if self.experiment.features.is_empty() {
            return Err(CliError::Config("experiment.features is empty".into()));
        }
        for spec in &self.experiment.features {
            parse_blocks(spec).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(h) = self.experiment.grid.iter().find(|h| h.family() != self.experiment.family) {
            return Err(CliError::Config(format!(
                "grid point of family {} under experiment.family = {}",
                h.family(),
                self.experiment.family
            )));
        }
        if self.experiment.strat_bins == 0 {
            return Err(CliError::Config("experiment.strat_bins must be positive".into()));
        }
        if self.experiment.embedding_dim == Some(0) {
            return Err(CliError::Config("experiment.embedding_dim must be positive".into()));
        }
        self.ingest.parse_options()?;
        self.synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }
}

/// Fails with a configuration error unless `p` is set and exists.
pub fn require_file(p: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = p.as_ref().ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))?;
    if !p.is_file() {
        return Err(CliError::Config(format!("paths.{key}: {} does not exist", p.display())));
    }
    Ok(p.clone())
}

/// As [`require_file`] for an optional input.
pub fn optional_file(p: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, CliError> {
    match p {
        None => Ok(None),
        Some(_) => require_file(p, key).map(Some),
    }
}
