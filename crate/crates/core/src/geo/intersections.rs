//! Road intersections from shared polyline vertices.

use std::collections::BTreeMap;

use super::layer::FeatureLayer;
use super::projection::ProjectedPoint;

/// Vertex snapping resolution in metres.
pub const SNAP_M: f64 = 1e-3;

pub const INTERSECTION_TAG: &str = "intersection";

type Key = (i64, i64);

fn snap(p: &ProjectedPoint) -> Key {
    ((p.x / SNAP_M).round() as i64, (p.y / SNAP_M).round() as i64)
}

#[derive(Default)]
struct Node {
    degree: usize,
    last_line: Option<usize>,
    lines: usize,
}

/// Snapped vertices shared by at least two distinct polylines and with at
/// least three incident segments in total, in ascending (x, y) order.
pub fn detect_intersections(roads: &FeatureLayer) -> FeatureLayer {
    let mut nodes: BTreeMap<Key, Node> = BTreeMap::new();
    for (li, line) in roads.as_polylines().iter().enumerate() {
        let keys: Vec<Key> = line.iter().map(snap).collect();
        for w in keys.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            for k in w {
                let n = nodes.entry(*k).or_default();
                n.degree += 1;
                if n.last_line != Some(li) {
                    n.last_line = Some(li);
                    n.lines += 1;
                }
            }
        }
    }
    let points = nodes
        .into_iter()
        .filter(|(_, n)| n.lines >= 2 && n.degree >= 3)
        .map(|((x, y), _)| ProjectedPoint::new(x as f64 * SNAP_M, y as f64 * SNAP_M))
        .collect();
    FeatureLayer::points(INTERSECTION_TAG, points).expect("snapped vertices are finite")
}
