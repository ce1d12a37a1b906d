//! Land-cover raster (ESRI ASCII grid) and feature masking by cell class.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read};

use super::layer::{FeatureLayer, LayerGeometry};
use super::projection::ProjectedPoint;
use crate::error::{Error, Result};

/// The 44 CORINE Land Cover level-3 class codes.
pub const CORINE_CODES: [u16; 44] = [
    111, 112, 121, 122, 123, 124, 131, 132, 133, 141, 142, 211, 212, 213, 221, 222, 223, 231, 241, 242, 243, 244, 311,
    312, 313, 321, 322, 323, 324, 331, 332, 333, 334, 335, 411, 412, 421, 422, 423, 511, 512, 521, 522, 523,
];

/// CORINE artificial-surface classes (111-142).
pub fn artificial_surfaces() -> BTreeSet<u16> {
    CORINE_CODES.iter().copied().filter(|c| (111..=142).contains(c)).collect()
}

pub fn corine_codes() -> BTreeSet<u16> {
    CORINE_CODES.iter().copied().collect()
}

/// A north-up raster of class codes. Row 0 is the northernmost row.
#[derive(Debug, Clone, PartialEq)]
pub struct LandCoverGrid {
    /// Lower-left corner of the lower-left cell, metres.
    pub x_origin: f64,
    pub y_origin: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major codes; `None` is NODATA.
    pub codes: Vec<Option<u16>>,
}

impl LandCoverGrid {
    pub fn new(
        x_origin: f64,
        y_origin: f64,
        cell_size: f64,
        width: usize,
        height: usize,
        codes: Vec<Option<u16>>,
        code_set: Option<&BTreeSet<u16>>,
    ) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Format(format!("cell size must be positive, got {cell_size}")));
        }
        if !(x_origin.is_finite() && y_origin.is_finite()) {
            return Err(Error::Format("non-finite grid origin".into()));
        }
        if codes.len() != width * height {
            return Err(Error::Format(format!(
                "grid has {} cells, expected {width} x {height}",
                codes.len()
            )));
        }
        if let Some(set) = code_set {
            if let Some(bad) = codes.iter().flatten().find(|c| !set.contains(c)) {
                return Err(Error::Format(format!("land-cover code {bad} is not in the classification")));
            }
        }
        Ok(Self { x_origin, y_origin, cell_size, width, height, codes })
    }

    /// `(col, row)` of the cell containing `p`; cells are closed on their
    /// west and south edges.
    pub fn cell_of(&self, p: &ProjectedPoint) -> Option<(usize, usize)> {
        let fx = ((p.x - self.x_origin) / self.cell_size).floor();
        let fy = ((p.y - self.y_origin) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        let (col, row_from_bottom) = (fx as usize, fy as usize);
        Some((col, self.height - 1 - row_from_bottom))
    }

    /// Class code at `p`; `None` outside the extent or on NODATA.
    pub fn code_at(&self, p: &ProjectedPoint) -> Option<u16> {
        self.cell_of(p).and_then(|(c, r)| self.codes[r * self.width + c])
    }

    fn x_line(&self, i: usize) -> f64 {
        self.x_origin + i as f64 * self.cell_size
    }

    fn y_line(&self, i: usize) -> f64 {
        self.y_origin + i as f64 * self.cell_size
    }
}

/// Reads an ESRI ASCII grid. `code_set`, when given, restricts valid codes.
pub fn read_esri_ascii<R: Read>(source: R, code_set: Option<&BTreeSet<u16>>) -> Result<LandCoverGrid> {
    let reader = BufReader::new(source);
    let mut header: Vec<(String, f64)> = Vec::new();
    let mut values: Vec<String> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(first) = parts.next() else { continue };
        if values.is_empty() && first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            let v = parts
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            header.push((first.to_ascii_lowercase(), v));
        } else {
            values.push(first.to_string());
            values.extend(parts.map(str::to_string));
        }
    }
    let get = |k: &str| header.iter().find(|(name, _)| name == k).map(|(_, v)| *v);
    let need = |k: &str| get(k).ok_or_else(|| Error::Format(format!("grid header lacks {k}")));
    let width = need("ncols")? as usize;
    let height = need("nrows")? as usize;
    let cell = need("cellsize")?;
    let (x0, y0) = match (get("xllcorner"), get("yllcorner"), get("xllcenter"), get("yllcenter")) {
        (Some(x), Some(y), _, _) => (x, y),
        (_, _, Some(x), Some(y)) => (x - cell / 2.0, y - cell / 2.0),
        _ => return Err(Error::Format("grid header lacks xllcorner/yllcorner".into())),
    };
    let nodata = get("nodata_value");
    if values.len() != width * height {
        return Err(Error::Format(format!(
            "grid body has {} values, header declares {width} x {height}",
            values.len()
        )));
    }
    let codes = values
        .iter()
        .map(|s| {
            let v: f64 = s.parse().map_err(|_| Error::Format(format!("bad grid value {s:?}")))?;
            if nodata == Some(v) {
                return Ok(None);
            }
            if v.fract() != 0.0 || !(0.0..=f64::from(u16::MAX)).contains(&v) {
                return Err(Error::Format(format!("grid value {s:?} is not a class code")));
            }
            Ok(Some(v as u16))
        })
        .collect::<Result<Vec<_>>>()?;
    LandCoverGrid::new(x0, y0, cell, width, height, codes, code_set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutcome {
    pub layer: FeatureLayer,
    /// Points, or polyline pieces, that fell outside the raster or on NODATA.
    pub dropped_outside: usize,
}

/// Cell-boundary crossings of segment `a -> b` as sorted parameters in (0, 1),
/// ignoring crossings within a nanometre of either end.
fn crossings(grid: &LandCoverGrid, a: ProjectedPoint, b: ProjectedPoint) -> Vec<f64> {
    let len = a.distance(&b);
    let eps = 1e-9 / len;
    let mut ts = Vec::new();
    let mut push_axis = |pa: f64, pb: f64, n: usize, line: &dyn Fn(usize) -> f64| {
        if pa == pb {
            return;
        }
        for i in 0..=n {
            let t = (line(i) - pa) / (pb - pa);
            if t > eps && t < 1.0 - eps {
                ts.push(t);
            }
        }
    };
    push_axis(a.x, b.x, grid.width, &|i| grid.x_line(i));
    push_axis(a.y, b.y, grid.height, &|i| grid.y_line(i));
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() <= eps);
    ts
}

fn lerp(a: ProjectedPoint, b: ProjectedPoint, t: f64) -> ProjectedPoint {
    ProjectedPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

struct Piece {
    seg: usize,
    t0: f64,
    t1: f64,
    kept: bool,
}

fn mask_polyline(line: &[ProjectedPoint], grid: &LandCoverGrid, keep: &BTreeSet<u16>, dropped: &mut usize) -> Vec<Vec<ProjectedPoint>> {
    let mut pieces = Vec::new();
    for (seg, w) in line.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let mut bounds = vec![0.0];
        bounds.extend(crossings(grid, a, b));
        bounds.push(1.0);
        for t in bounds.windows(2) {
            let code = grid.code_at(&lerp(a, b, 0.5 * (t[0] + t[1])));
            if code.is_none() {
                *dropped += 1;
            }
            pieces.push(Piece { seg, t0: t[0], t1: t[1], kept: code.is_some_and(|c| keep.contains(&c)) });
        }
    }

    // Emit maximal runs of kept pieces, keeping original vertices and only
    // the cut points where a run starts or ends mid-segment.
    let mut out = Vec::new();
    let mut chain: Vec<ProjectedPoint> = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        let (a, b) = (line[p.seg], line[p.seg + 1]);
        if !p.kept {
            if chain.len() >= 2 {
                out.push(std::mem::take(&mut chain));
            }
            chain.clear();
            continue;
        }
        if chain.is_empty() {
            chain.push(if p.t0 == 0.0 { a } else { lerp(a, b, p.t0) });
        }
        if p.t1 == 1.0 {
            chain.push(b);
        } else if !pieces.get(i + 1).is_some_and(|n| n.kept) {
            chain.push(lerp(a, b, p.t1));
        }
    }
    if chain.len() >= 2 {
        out.push(chain);
    }
    out
}

/// Keeps the parts of a layer lying on cells whose class is in `keep_codes`.
///
/// Points are kept when their cell qualifies. Polyline segments are split
/// at every cell boundary they cross and each piece is kept when the cell
/// under its midpoint qualifies; consecutive kept pieces are rejoined.
/// Features outside the raster extent (or on NODATA) are dropped and counted.
pub fn mask_by_landcover(layer: &FeatureLayer, grid: &LandCoverGrid, keep_codes: &BTreeSet<u16>) -> MaskOutcome {
    let mut dropped = 0;
    let geometry = match &layer.geometry {
        LayerGeometry::Points(ps) => LayerGeometry::Points(
            ps.iter()
                .filter(|p| match grid.code_at(p) {
                    Some(c) => keep_codes.contains(&c),
                    None => {
                        dropped += 1;
                        false
                    }
                })
                .copied()
                .collect(),
        ),
        LayerGeometry::Polylines(ls) => LayerGeometry::Polylines(
            ls.iter()
                .flat_map(|l| mask_polyline(l, grid, keep_codes, &mut dropped))
                .collect(),
        ),
    };
    MaskOutcome { layer: FeatureLayer { tag: layer.tag.clone(), geometry }, dropped_outside: dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::buffer::clip_length_in_buffer;

    /// 3 x 2 grid of 100 m cells with origin (0, 0):
    /// top row    [111, 311, 112]
    /// bottom row [311, 121, NODATA]
    fn grid() -> LandCoverGrid {
        let codes = vec![Some(111), Some(311), Some(112), Some(311), Some(121), None];
        LandCoverGrid::new(0.0, 0.0, 100.0, 3, 2, codes, Some(&corine_codes())).unwrap()
    }

    fn p(x: f64, y: f64) -> ProjectedPoint {
        ProjectedPoint::new(x, y)
    }

    #[test]
    fn cell_lookup() {
        let g = grid();
        assert_eq!(g.code_at(&p(50.0, 150.0)), Some(111));
        assert_eq!(g.code_at(&p(150.0, 50.0)), Some(121));
        assert_eq!(g.code_at(&p(250.0, 50.0)), None);
        assert_eq!(g.code_at(&p(-1.0, 50.0)), None);
        assert_eq!(g.code_at(&p(300.0, 50.0)), None);
    }

    #[test]
    fn forest_point_is_removed() {
        let l = FeatureLayer::points("retail", vec![p(150.0, 150.0), p(50.0, 150.0), p(500.0, 0.0)]).unwrap();
        let m = mask_by_landcover(&l, &grid(), &artificial_surfaces());
        assert_eq!(m.layer.as_points(), &[p(50.0, 150.0)]);
        assert_eq!(m.dropped_outside, 1);
    }

    #[test]
    fn identity_and_empty_masks() {
        let l = FeatureLayer::polylines("road", vec![vec![p(10.0, 10.0), p(290.0, 190.0), p(20.0, 180.0)]]).unwrap();
        let all: BTreeSet<u16> = [111, 112, 121, 311].into();
        // NODATA cell still drops; use a polyline avoiding it.
        let l2 = FeatureLayer::polylines("road", vec![vec![p(10.0, 10.0), p(190.0, 190.0), p(20.0, 180.0)]]).unwrap();
        assert_eq!(mask_by_landcover(&l2, &grid(), &all).layer, l2);
        assert!(mask_by_landcover(&l, &grid(), &BTreeSet::new()).layer.is_empty());
    }

    #[test]
    fn segment_inside_kept_cell_keeps_full_length() {
        let l = FeatureLayer::polylines("road", vec![vec![p(10.0, 110.0), p(90.0, 190.0)]]).unwrap();
        let m = mask_by_landcover(&l, &grid(), &artificial_surfaces());
        assert_eq!(m.layer, l);
    }

    #[test]
    fn crossing_segment_is_cut_at_cell_edges() {
        // Along y = 150 through 111 | 311 | 112: keep 0..100 and 200..300.
        let l = FeatureLayer::polylines("road", vec![vec![p(0.0, 150.0), p(300.0 - 1e-6, 150.0)]]).unwrap();
        let m = mask_by_landcover(&l, &grid(), &artificial_surfaces());
        let lines = m.layer.as_polylines();
        assert_eq!(lines.len(), 2);
        let km = clip_length_in_buffer(&m.layer, p(150.0, 150.0), 1000.0);
        assert!((km * 1000.0 - 200.0).abs() < 1e-6, "{km}");
        let again = mask_by_landcover(&m.layer, &grid(), &artificial_surfaces());
        assert_eq!(again.layer, m.layer);
    }

    #[test]
    fn esri_ascii_reader() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 100\nNODATA_value -9999\n111 311 112\n311 121 -9999\n";
        assert_eq!(read_esri_ascii(text.as_bytes(), Some(&corine_codes())).unwrap(), grid());
        let bad = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 100\n999\n";
        assert!(read_esri_ascii(bad.as_bytes(), Some(&corine_codes())).is_err());
        let short = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 100\n111\n";
        assert!(read_esri_ascii(short.as_bytes(), None).is_err());
    }
}
