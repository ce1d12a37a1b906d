//! Design matrices assembled from selectable feature blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregate::{proportion_variable, ZoneTable};
use crate::error::{Error, Result};
use crate::geo::env::{metric_columns, EnvTable, Radius};
use crate::stats;

/// A named group of predictor columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    /// Numeric summaries and category proportions.
    Base,
    LatLong,
    /// One-hot region code, first level dropped.
    Postcode2,
    Osm(Radius),
    /// All four radii.
    OsmAll,
    Embeddings,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Base => f.write_str("base"),
            Block::LatLong => f.write_str("lat_long"),
            Block::Postcode2 => f.write_str("postcode_2"),
            Block::Osm(r) => write!(f, "osm_r{r}"),
            Block::OsmAll => f.write_str("osm_rALL"),
            Block::Embeddings => f.write_str("embeddings"),
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "base" => Block::Base,
            "lat_long" => Block::LatLong,
            "postcode_2" => Block::Postcode2,
            "osm_rALL" => Block::OsmAll,
            "embeddings" | "emb" => Block::Embeddings,
            other => match other.strip_prefix("osm_r") {
                Some(r) => Block::Osm(r.parse()?),
                None => return Err(Error::Config(format!("unknown feature block {other:?}"))),
            },
        })
    }
}

impl Serialize for Block {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses `base+lat_long+osm_r5` style feature sets.
pub fn parse_blocks(spec: &str) -> Result<Vec<Block>> {
    let blocks: Vec<Block> = spec.split('+').map(str::parse).collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    for b in &blocks {
        if !seen.insert(*b) {
            return Err(Error::Config(format!("feature block {b} listed twice")));
        }
    }
    Ok(blocks)
}

pub fn blocks_label(blocks: &[Block]) -> String {
    blocks.iter().map(Block::to_string).collect::<Vec<_>>().join("+")
}

/// Rows are zones; the offset is `ln(expo_ag)` and the target the claim count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub zone_ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub target: DVector<f64>,
}

impl FeatureMatrix {
    pub fn new(
        zone_ids: Vec<String>,
        columns: Vec<String>,
        values: DMatrix<f64>,
        offset: DVector<f64>,
        target: DVector<f64>,
    ) -> Result<Self> {
        let m = Self { zone_ids, columns, values, offset, target };
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix from exposures rather than log exposures.
    pub fn from_exposure(
        zone_ids: Vec<String>,
        columns: Vec<String>,
        values: DMatrix<f64>,
        exposure: &[f64],
        target: DVector<f64>,
    ) -> Result<Self> {
        if let Some(e) = exposure.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::Domain(format!("exposure must be positive, got {e}")));
        }
        let offset = DVector::from_iterator(exposure.len(), exposure.iter().map(|e| e.ln()));
        Self::new(zone_ids, columns, values, offset, target)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.zone_ids.len();
        if self.values.nrows() != n || self.offset.len() != n || self.target.len() != n {
            return Err(Error::Inconsistent(format!(
                "row counts differ: ids {n}, values {}, offset {}, target {}",
                self.values.nrows(),
                self.offset.len(),
                self.target.len()
            )));
        }
        if self.values.ncols() != self.columns.len() {
            return Err(Error::Inconsistent(format!(
                "{} column names for {} columns",
                self.columns.len(),
                self.values.ncols()
            )));
        }
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(c) {
                return Err(Error::Inconsistent(format!("duplicate column {c:?}")));
            }
        }
        if let Some((i, _)) = self.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (i % n.max(1), i / n.max(1));
            return Err(Error::Numeric(format!(
                "non-finite value in zone {:?}, column {:?}",
                self.zone_ids[r], self.columns[c]
            )));
        }
        if self.offset.iter().chain(self.target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite offset or target".into()));
        }
        if self.target.iter().any(|y| *y < 0.0) {
            return Err(Error::Domain("negative claim count".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn exposure(&self) -> DVector<f64> {
        self.offset.map(f64::exp)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            zone_ids: idx.iter().map(|&i| self.zone_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            values: self.values.select_rows(idx),
            offset: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.offset[i])),
            target: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.target[i])),
        }
    }

    /// Same rows and target with a predictor matrix of no columns.
    pub fn intercept_only(&self) -> FeatureMatrix {
        FeatureMatrix {
            zone_ids: self.zone_ids.clone(),
            columns: Vec::new(),
            values: DMatrix::zeros(self.n_rows(), 0),
            offset: self.offset.clone(),
            target: self.target.clone(),
        }
    }
}

/// Precomputed image embeddings per zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    #[default]
    Resnet18,
    Vit,
}

impl EmbeddingSource {
    pub fn label(self) -> &'static str {
        match self {
            EmbeddingSource::Resnet18 => "resnet18",
            EmbeddingSource::Vit => "vit",
        }
    }

    pub fn default_dim(self) -> usize {
        match self {
            EmbeddingSource::Resnet18 => 512,
            EmbeddingSource::Vit => 768,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingBlock {
    pub fn columns(&self) -> Vec<String> {
        (0..self.dim).map(|i| format!("{}_emb_{i}", self.source.label())).collect()
    }
}

/// Reads `zone_id,v1,...,v_dim` rows. A first row whose second field is not
/// numeric is taken as a header.
pub fn load_embeddings<R: Read>(source: R, expected_dim: usize, label: EmbeddingSource) -> Result<EmbeddingBlock> {
    if expected_dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut vectors = BTreeMap::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if k == 0 && rec.get(1).is_some_and(|s| s.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        let found = rec.len().saturating_sub(1);
        if found != expected_dim {
            return Err(Error::Dimension { line, expected: expected_dim, found });
        }
        let id = rec[0].to_string();
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Row { line, message: format!("bad embedding value {s:?}") })
            })
            .collect::<Result<_>>()?;
        if vectors.insert(id.clone(), v).is_some() {
            return Err(Error::DuplicateZone(id));
        }
    }
    Ok(EmbeddingBlock { source: label, dim: expected_dim, vectors })
}

/// Optional inputs for the non-base blocks.
#[derive(Debug, Clone, Default)]
pub struct BlockSources {
    pub env: BTreeMap<Radius, EnvTable>,
    pub embeddings: Option<EmbeddingBlock>,
}

struct ColumnBlock {
    names: Vec<String>,
    /// Row-major values, one row per zone.
    rows: Vec<Vec<f64>>,
}

fn base_columns(zones: &ZoneTable) -> Result<ColumnBlock> {
    let covariates = zones.covariate_columns();
    let mut by_var: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    let props = zones.proportion_columns();
    for p in &props {
        by_var.entry(proportion_variable(p)).or_default().push(p);
    }
    let kept_props: BTreeSet<&String> = by_var.values().flat_map(|v| v.iter().skip(1).copied()).collect();
    let props: Vec<&String> = props.iter().filter(|p| kept_props.contains(p)).collect();
    let mut names = covariates.clone();
    names.extend(props.iter().map(|p| (*p).clone()));
    let rows = zones
        .zones
        .iter()
        .map(|z| {
            let mut row = Vec::with_capacity(names.len());
            for c in &covariates {
                let v = z.covariates.get(c).ok_or_else(|| {
                    Error::Inconsistent(format!("zone {:?} lacks covariate {c:?}", z.postcode))
                })?;
                row.push(*v);
            }
            for p in &props {
                row.push(z.proportions.get(*p).copied().unwrap_or(0.0));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(ColumnBlock { names, rows })
}

fn postcode2_columns(zones: &ZoneTable) -> ColumnBlock {
    let levels: BTreeSet<&str> = zones.zones.iter().map(|z| z.postcode_2.as_str()).collect();
    let kept: Vec<&str> = levels.into_iter().skip(1).collect();
    ColumnBlock {
        names: kept.iter().map(|l| format!("postcode_2_{l}")).collect(),
        rows: zones
            .zones
            .iter()
            .map(|z| kept.iter().map(|l| f64::from(u8::from(z.postcode_2 == *l))).collect())
            .collect(),
    }
}

fn env_columns(zones: &ZoneTable, radius: Radius, sources: &BlockSources) -> Result<ColumnBlock> {
    let table = sources
        .env
        .get(&radius)
        .ok_or_else(|| Error::Config(format!("no environment features for radius {radius} km")))?;
    let rows = zones
        .zones
        .iter()
        .map(|z| {
            table
                .rows
                .get(&z.postcode)
                .map(|v| v.to_vec())
                .ok_or_else(|| Error::MissingZone(z.postcode.clone(), format!("osm_r{radius}")))
        })
        .collect::<Result<_>>()?;
    Ok(ColumnBlock { names: metric_columns(radius), rows })
}

fn embedding_columns(zones: &ZoneTable, sources: &BlockSources) -> Result<ColumnBlock> {
    let emb = sources
        .embeddings
        .as_ref()
        .ok_or_else(|| Error::Config("embeddings block selected but no embedding file given".into()))?;
    let rows = zones
        .zones
        .iter()
        .map(|z| {
            emb.vectors
                .get(&z.postcode)
                .cloned()
                .ok_or_else(|| Error::MissingZone(z.postcode.clone(), "embeddings".into()))
        })
        .collect::<Result<_>>()?;
    Ok(ColumnBlock { names: emb.columns(), rows })
}

/// Concatenates the selected blocks in the given order.
pub fn assemble(zones: &ZoneTable, blocks: &[Block], sources: &BlockSources) -> Result<FeatureMatrix> {
    let mut parts = Vec::new();
    for b in blocks {
        match b {
            Block::Base => parts.push(base_columns(zones)?),
            Block::LatLong => parts.push(ColumnBlock {
                names: vec!["lat".into(), "long".into()],
                rows: zones.zones.iter().map(|z| vec![z.lat, z.long]).collect(),
            }),
            Block::Postcode2 => parts.push(postcode2_columns(zones)),
            Block::Osm(r) => parts.push(env_columns(zones, *r, sources)?),
            Block::OsmAll => {
                for r in Radius::ALL {
                    parts.push(env_columns(zones, r, sources)?);
                }
            }
            Block::Embeddings => parts.push(embedding_columns(zones, sources)?),
        }
    }
    let n = zones.len();
    let columns: Vec<String> = parts.iter().flat_map(|p| p.names.iter().cloned()).collect();
    let mut values = DMatrix::zeros(n, columns.len());
    let mut c0 = 0;
    for p in &parts {
        for (i, row) in p.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                values[(i, c0 + j)] = *v;
            }
        }
        c0 += p.names.len();
    }
    let exposure: Vec<f64> = zones.zones.iter().map(|z| z.expo_ag).collect();
    let target = DVector::from_iterator(n, zones.zones.iter().map(|z| z.nclaims_ag as f64));
    FeatureMatrix::from_exposure(zones.zones.iter().map(|z| z.postcode.clone()).collect(), columns, values, &exposure, target)
}

/// Per-column centring and scaling learnt on fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub sd: Vec<f64>,
    pub constant: Vec<bool>,
}

impl StandardizationParams {
    fn check(&self, m: &FeatureMatrix) -> Result<()> {
        if self.columns != m.columns {
            return Err(Error::SchemaMismatch("standardization columns differ from matrix columns".into()));
        }
        Ok(())
    }
}

fn is_constant(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

pub fn standardize_fit(m: &FeatureMatrix) -> (FeatureMatrix, StandardizationParams) {
    let p = m.n_cols();
    let mut mean = Vec::with_capacity(p);
    let mut sd = Vec::with_capacity(p);
    let mut constant = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = m.values.column(j).iter().copied().collect();
        let mu = if col.is_empty() { 0.0 } else { stats::mean(&col) };
        let s = if col.is_empty() { 0.0 } else { stats::population_sd(&col) };
        mean.push(mu);
        constant.push(is_constant(mu, s));
        sd.push(s);
    }
    let params = StandardizationParams { columns: m.columns.clone(), mean, sd, constant };
    let out = standardize_apply(m, &params).expect("columns match by construction");
    (out, params)
}

/// Applies stored parameters; constant columns pass through unchanged.
pub fn standardize_apply(m: &FeatureMatrix, params: &StandardizationParams) -> Result<FeatureMatrix> {
    params.check(m)?;
    let mut out = m.clone();
    for j in 0..m.n_cols() {
        if params.constant[j] {
            continue;
        }
        let (mu, s) = (params.mean[j], params.sd[j]);
        out.values.column_mut(j).apply(|v| *v = (*v - mu) / s);
    }
    Ok(out)
}

pub fn unstandardize(m: &FeatureMatrix, params: &StandardizationParams) -> Result<FeatureMatrix> {
    params.check(m)?;
    let mut out = m.clone();
    for j in 0..m.n_cols() {
        if params.constant[j] {
            continue;
        }
        let (mu, s) = (params.mean[j], params.sd[j]);
        out.values.column_mut(j).apply(|v| *v = *v * s + mu);
    }
    Ok(out)
}
