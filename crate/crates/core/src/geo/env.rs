//! Built-environment metrics inside circular buffers around zone centroids.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{build_spatial_index, IndexedLayer};
use super::intersections::detect_intersections;
use super::layer::{FeatureLayer, LayerKind, ROAD_TAG};
use super::projection::{GeoPoint, Lambert72, ProjectedPoint};
use crate::error::{Error, Result};

/// Buffer radii in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Radius {
    R0_5,
    R1,
    R3,
    R5,
}

impl Radius {
    pub const ALL: [Radius; 4] = [Radius::R0_5, Radius::R1, Radius::R3, Radius::R5];

    pub fn km(self) -> f64 {
        match self {
            Radius::R0_5 => 0.5,
            Radius::R1 => 1.0,
            Radius::R3 => 3.0,
            Radius::R5 => 5.0,
        }
    }

    pub fn meters(self) -> f64 {
        self.km() * 1000.0
    }

    /// Short label: `0.5`, `1`, `3`, `5`.
    pub fn label(self) -> &'static str {
        match self {
            Radius::R0_5 => "0.5",
            Radius::R1 => "1",
            Radius::R3 => "3",
            Radius::R5 => "5",
        }
    }

    /// Column suffix: `_r0.5`, `_r1`, `_r3`, `_r5`.
    pub fn suffix(self) -> String {
        format!("_r{}", self.label())
    }

    pub fn area_km2(self) -> f64 {
        std::f64::consts::PI * self.km() * self.km()
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Serialised as the radius in km; read back from a number or a string.
impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.km())
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string(),
            Raw::Text(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Radius {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad radius {s:?}")))?;
        Radius::ALL
            .into_iter()
            .find(|r| r.km() == v)
            .ok_or_else(|| Error::Config(format!("radius {s} km is not one of 0.5, 1, 3, 5")))
    }
}

/// Point-layer tags that must be present (possibly empty).
pub const POINT_TAGS: [&str; 8] = [
    "roundabout",
    "traffic_signal",
    "retail",
    "tourism",
    "parking",
    "school",
    "healthcare",
    "fuel",
];

/// Metric names, in output column order.
pub const METRIC_NAMES: [&str; 13] = [
    "road_len_km_per_km2",
    "intersection_count_per_km2",
    "roundabout_count_per_km2",
    "traffic_signal_count_per_km2",
    "retail_count_per_km2",
    "tourism_count_per_km2",
    "parking_count_per_km2",
    "has_education",
    "has_healthcare",
    "has_fuel_station",
    "school_count_per_km2",
    "healthcare_count_per_km2",
    "fuel_count_per_km2",
];

/// Raw (non-normalised) totals behind an [`EnvFeatureVector`].
pub const TOTAL_NAMES: [&str; 10] = [
    "road_len_km",
    "intersection_count",
    "roundabout_count",
    "traffic_signal_count",
    "retail_count",
    "tourism_count",
    "parking_count",
    "school_count",
    "healthcare_count",
    "fuel_count",
];

pub fn metric_columns(radius: Radius) -> Vec<String> {
    METRIC_NAMES.iter().map(|n| format!("{n}{}", radius.suffix())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvFeatureVector {
    pub radius: Radius,
    pub road_len_km_per_km2: f64,
    pub intersection_count_per_km2: f64,
    pub roundabout_count_per_km2: f64,
    pub traffic_signal_count_per_km2: f64,
    pub retail_count_per_km2: f64,
    pub tourism_count_per_km2: f64,
    pub parking_count_per_km2: f64,
    pub school_count_per_km2: f64,
    pub healthcare_count_per_km2: f64,
    pub fuel_count_per_km2: f64,
    pub has_education: u8,
    pub has_healthcare: u8,
    pub has_fuel_station: u8,
    pub road_len_km: f64,
    /// Counts in [`TOTAL_NAMES`] order after `road_len_km`.
    pub counts: [usize; 9],
}

impl EnvFeatureVector {
    /// Metric values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 13] {
        [
            self.road_len_km_per_km2,
            self.intersection_count_per_km2,
            self.roundabout_count_per_km2,
            self.traffic_signal_count_per_km2,
            self.retail_count_per_km2,
            self.tourism_count_per_km2,
            self.parking_count_per_km2,
            f64::from(self.has_education),
            f64::from(self.has_healthcare),
            f64::from(self.has_fuel_station),
            self.school_count_per_km2,
            self.healthcare_count_per_km2,
            self.fuel_count_per_km2,
        ]
    }

    /// Totals in [`TOTAL_NAMES`] order.
    pub fn totals(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        out[0] = self.road_len_km;
        for (o, c) in out[1..].iter_mut().zip(self.counts) {
            *o = c as f64;
        }
        out
    }
}

/// Masked layers, indexed, plus intersections derived from the roads.
#[derive(Debug, Clone)]
pub struct LayerSet {
    roads: IndexedLayer,
    intersections: IndexedLayer,
    points: BTreeMap<&'static str, IndexedLayer>,
}

impl LayerSet {
    /// Requires a polyline `road` layer and every tag in [`POINT_TAGS`];
    /// other tags are ignored.
    pub fn new(mut layers: BTreeMap<String, FeatureLayer>) -> Result<Self> {
        let roads = layers
            .remove(ROAD_TAG)
            .ok_or_else(|| Error::Config(format!("missing required layer {ROAD_TAG:?}")))?;
        if roads.kind() != LayerKind::Polyline {
            return Err(Error::Config("road layer must hold polylines".into()));
        }
        let mut points = BTreeMap::new();
        for tag in POINT_TAGS {
            let layer = layers
                .remove(tag)
                .ok_or_else(|| Error::Config(format!("missing required layer {tag:?}")))?;
            if layer.kind() != LayerKind::Point {
                return Err(Error::Config(format!("layer {tag:?} must hold points")));
            }
            points.insert(tag, build_spatial_index(layer));
        }
        let intersections = build_spatial_index(detect_intersections(&roads));
        Ok(Self { roads: build_spatial_index(roads), intersections, points })
    }

    /// A complete set of empty layers.
    pub fn empty() -> Self {
        let mut layers = BTreeMap::new();
        layers.insert(ROAD_TAG.to_string(), FeatureLayer::empty(ROAD_TAG, LayerKind::Polyline));
        for tag in POINT_TAGS {
            layers.insert(tag.to_string(), FeatureLayer::empty(tag, LayerKind::Point));
        }
        Self::new(layers).expect("complete layer set")
    }

    pub fn intersections(&self) -> &FeatureLayer {
        self.intersections.layer()
    }

    fn count(&self, tag: &str, c: ProjectedPoint, r: f64) -> usize {
        self.points[tag].count_in_disc(c, r)
    }

    /// Metrics around an already-projected centre.
    pub fn features_at(&self, center: ProjectedPoint, radius: Radius) -> EnvFeatureVector {
        let r = radius.meters();
        let area = radius.area_km2();
        let road_len_km = self.roads.clipped_length_km(center, r);
        let counts = [
            self.intersections.count_in_disc(center, r),
            self.count("roundabout", center, r),
            self.count("traffic_signal", center, r),
            self.count("retail", center, r),
            self.count("tourism", center, r),
            self.count("parking", center, r),
            self.count("school", center, r),
            self.count("healthcare", center, r),
            self.count("fuel", center, r),
        ];
        let d = |i: usize| counts[i] as f64 / area;
        EnvFeatureVector {
            radius,
            road_len_km_per_km2: road_len_km / area,
            intersection_count_per_km2: d(0),
            roundabout_count_per_km2: d(1),
            traffic_signal_count_per_km2: d(2),
            retail_count_per_km2: d(3),
            tourism_count_per_km2: d(4),
            parking_count_per_km2: d(5),
            school_count_per_km2: d(6),
            healthcare_count_per_km2: d(7),
            fuel_count_per_km2: d(8),
            has_education: u8::from(counts[6] > 0),
            has_healthcare: u8::from(counts[7] > 0),
            has_fuel_station: u8::from(counts[8] > 0),
            road_len_km,
            counts,
        }
    }
}

/// Metrics for one zone centroid and one radius.
pub fn env_features(center: GeoPoint, radius: Radius, layers: &LayerSet, projection: &Lambert72) -> Result<EnvFeatureVector> {
    Ok(layers.features_at(projection.project(center)?, radius))
}

/// Per-zone metrics at one radius, keyed by postcode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvTable {
    pub radius: Radius,
    pub rows: BTreeMap<String, [f64; 13]>,
    /// Raw totals; empty when read back from a metrics file.
    pub totals: BTreeMap<String, [f64; 10]>,
}

impl EnvTable {
    /// Computes metrics for every `(postcode, centroid)` in parallel.
    pub fn compute(centers: &[(String, GeoPoint)], radius: Radius, layers: &LayerSet, projection: &Lambert72) -> Result<Self> {
        let vecs = centers
            .par_iter()
            .map(|(pc, g)| env_features(*g, radius, layers, projection).map(|v| (pc.clone(), v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            radius,
            rows: vecs.iter().map(|(pc, v)| (pc.clone(), v.values())).collect(),
            totals: vecs.iter().map(|(pc, v)| (pc.clone(), v.totals())).collect(),
        })
    }

    /// Metrics file: `postcode` then the 13 metric columns with the radius suffix.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["postcode".to_string()];
        header.extend(metric_columns(self.radius));
        w.write_record(&header)?;
        for (pc, vals) in &self.rows {
            let mut row = vec![pc.clone()];
            row.extend(vals.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_totals_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["postcode".to_string()];
        header.extend(TOTAL_NAMES.iter().map(|n| format!("{n}{}", self.radius.suffix())));
        w.write_record(&header)?;
        for (pc, vals) in &self.totals {
            let mut row = vec![pc.clone()];
            row.extend(vals.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, radius: Radius) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let header = r.headers()?.clone();
        let pos = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("environment file lacks column {name:?}")))
        };
        let pc = pos("postcode")?;
        let cols: Vec<usize> = metric_columns(radius).iter().map(|n| pos(n)).collect::<Result<_>>()?;
        let mut rows = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut vals = [0.0; 13];
            for (v, &c) in vals.iter_mut().zip(&cols) {
                let s = rec.get(c).unwrap_or("");
                *v = s.parse().map_err(|_| Error::Row { line, message: format!("unparseable value {s:?}") })?;
            }
            let key = rec.get(pc).unwrap_or("").to_string();
            if rows.insert(key.clone(), vals).is_some() {
                return Err(Error::DuplicateZone(key));
            }
        }
        Ok(Self { radius, rows, totals: BTreeMap::new() })
    }
}
