//! Point and polyline feature layers, and their GeoJSON encoding.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::projection::{GeoPoint, Lambert72, ProjectedPoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Point,
    Polyline,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGeometry {
    Points(Vec<ProjectedPoint>),
    /// Vertex chains; each has at least two vertices.
    Polylines(Vec<Vec<ProjectedPoint>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub tag: String,
    pub geometry: LayerGeometry,
}

impl FeatureLayer {
    pub fn points(tag: impl Into<String>, points: Vec<ProjectedPoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Format(format!("non-finite point {p:?}")));
        }
        Ok(Self { tag: tag.into(), geometry: LayerGeometry::Points(points) })
    }

    pub fn polylines(tag: impl Into<String>, lines: Vec<Vec<ProjectedPoint>>) -> Result<Self> {
        for line in &lines {
            if line.len() < 2 {
                return Err(Error::Format("polyline with fewer than two vertices".into()));
            }
            if line.iter().any(|p| !p.is_finite()) {
                return Err(Error::Format("non-finite polyline vertex".into()));
            }
        }
        Ok(Self { tag: tag.into(), geometry: LayerGeometry::Polylines(lines) })
    }

    pub fn empty(tag: impl Into<String>, kind: LayerKind) -> Self {
        let geometry = match kind {
            LayerKind::Point => LayerGeometry::Points(Vec::new()),
            LayerKind::Polyline => LayerGeometry::Polylines(Vec::new()),
        };
        Self { tag: tag.into(), geometry }
    }

    pub fn kind(&self) -> LayerKind {
        match self.geometry {
            LayerGeometry::Points(_) => LayerKind::Point,
            LayerGeometry::Polylines(_) => LayerKind::Polyline,
        }
    }

    /// Number of features (points or polylines).
    pub fn len(&self) -> usize {
        match &self.geometry {
            LayerGeometry::Points(p) => p.len(),
            LayerGeometry::Polylines(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_points(&self) -> &[ProjectedPoint] {
        match &self.geometry {
            LayerGeometry::Points(p) => p,
            LayerGeometry::Polylines(_) => &[],
        }
    }

    pub fn as_polylines(&self) -> &[Vec<ProjectedPoint>] {
        match &self.geometry {
            LayerGeometry::Polylines(l) => l,
            LayerGeometry::Points(_) => &[],
        }
    }

    /// All polyline segments in (line, vertex) order.
    pub fn segments(&self) -> impl Iterator<Item = (ProjectedPoint, ProjectedPoint)> + '_ {
        self.as_polylines()
            .iter()
            .flat_map(|l| l.windows(2).map(|w| (w[0], w[1])))
    }
}

/// Coordinate reference of GeoJSON positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerCrs {
    /// `[long, lat]` degrees, projected on load.
    #[default]
    Wgs84,
    /// `[x, y]` metres, used as is.
    Lambert72,
}

/// The tag whose features are polylines; every other tag holds points.
pub const ROAD_TAG: &str = "road";

fn position(v: &Value, crs: LayerCrs, proj: &Lambert72) -> Result<ProjectedPoint> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::Format(format!("bad GeoJSON position {v}")))?;
    let (a, b) = match (arr[0].as_f64(), arr[1].as_f64()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Format(format!("bad GeoJSON position {v}"))),
    };
    match crs {
        LayerCrs::Lambert72 => Ok(ProjectedPoint::new(a, b)),
        LayerCrs::Wgs84 => proj.project(GeoPoint::new(b, a)?),
    }
}

fn positions(v: &Value, crs: LayerCrs, proj: &Lambert72) -> Result<Vec<ProjectedPoint>> {
    v.as_array()
        .ok_or_else(|| Error::Format("expected an array of positions".into()))?
        .iter()
        .map(|p| position(p, crs, proj))
        .collect()
}

fn centroid(pts: &[ProjectedPoint]) -> Option<ProjectedPoint> {
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    Some(ProjectedPoint::new(
        pts.iter().map(|p| p.x).sum::<f64>() / n,
        pts.iter().map(|p| p.y).sum::<f64>() / n,
    ))
}

enum Parsed {
    Points(Vec<ProjectedPoint>),
    Lines(Vec<Vec<ProjectedPoint>>),
}

fn parse_geometry(g: &Value, crs: LayerCrs, proj: &Lambert72) -> Result<Parsed> {
    let kind = g.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = g.get("coordinates").unwrap_or(&Value::Null);
    Ok(match kind {
        "Point" => Parsed::Points(vec![position(coords, crs, proj)?]),
        "MultiPoint" => Parsed::Points(positions(coords, crs, proj)?),
        "LineString" => Parsed::Lines(vec![positions(coords, crs, proj)?]),
        "MultiLineString" | "Polygon" => Parsed::Lines(
            coords
                .as_array()
                .ok_or_else(|| Error::Format(format!("bad {kind} coordinates")))?
                .iter()
                .map(|l| positions(l, crs, proj))
                .collect::<Result<_>>()?,
        ),
        other => return Err(Error::Format(format!("unsupported geometry type {other:?}"))),
    })
}

/// Reads a FeatureCollection and groups features by their `tag` property.
///
/// Features under [`ROAD_TAG`] must be (multi)linestrings. Every other tag
/// is a point layer; line or polygon geometries there (closed ways such as
/// roundabouts, parking areas) are reduced to their vertex centroid.
pub fn read_geojson_layers<R: Read>(source: R, crs: LayerCrs, proj: &Lambert72) -> Result<BTreeMap<String, FeatureLayer>> {
    let doc: Value = serde_json::from_reader(source)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format("expected a FeatureCollection".into()))?;

    let mut points: BTreeMap<String, Vec<ProjectedPoint>> = BTreeMap::new();
    let mut lines: BTreeMap<String, Vec<Vec<ProjectedPoint>>> = BTreeMap::new();
    for (i, f) in features.iter().enumerate() {
        let tag = f
            .pointer("/properties/tag")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format(format!("feature {i} has no string \"tag\" property")))?;
        let Some(geom) = f.get("geometry").filter(|g| !g.is_null()) else {
            continue;
        };
        let parsed = parse_geometry(geom, crs, proj)?;
        if tag == ROAD_TAG {
            match parsed {
                Parsed::Lines(ls) => lines
                    .entry(tag.to_string())
                    .or_default()
                    .extend(ls.into_iter().filter(|l| l.len() >= 2)),
                Parsed::Points(_) => {
                    return Err(Error::Format(format!("feature {i}: road geometry must be a LineString")))
                }
            }
        } else {
            let entry = points.entry(tag.to_string()).or_default();
            match parsed {
                Parsed::Points(ps) => entry.extend(ps),
                Parsed::Lines(ls) => {
                    let all: Vec<ProjectedPoint> = ls.into_iter().flatten().collect();
                    entry.extend(centroid(&all));
                }
            }
        }
    }

    let mut out = BTreeMap::new();
    for (tag, ps) in points {
        out.insert(tag.clone(), FeatureLayer::points(tag, ps)?);
    }
    for (tag, ls) in lines {
        out.insert(tag.clone(), FeatureLayer::polylines(tag, ls)?);
    }
    Ok(out)
}

/// Writes layers as one FeatureCollection with projected (metre) positions.
pub fn write_geojson_layers<'a, W: Write>(layers: impl IntoIterator<Item = &'a FeatureLayer>, sink: W) -> Result<()> {
    let mut features = Vec::new();
    for layer in layers {
        match &layer.geometry {
            LayerGeometry::Points(ps) => features.extend(ps.iter().map(|p| {
                json!({"type": "Feature", "properties": {"tag": layer.tag},
                       "geometry": {"type": "Point", "coordinates": [p.x, p.y]}})
            })),
            LayerGeometry::Polylines(ls) => features.extend(ls.iter().map(|l| {
                let coords: Vec<[f64; 2]> = l.iter().map(|p| [p.x, p.y]).collect();
                json!({"type": "Feature", "properties": {"tag": layer.tag},
                       "geometry": {"type": "LineString", "coordinates": coords}})
            })),
        }
    }
    serde_json::to_writer(sink, &json!({"type": "FeatureCollection", "features": features}))?;
    Ok(())
}
