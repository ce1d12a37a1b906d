//! Uniform-grid bucket index over point or segment bounding boxes.

use super::buffer::{in_disc, segment_overlap};
use super::layer::{FeatureLayer, LayerGeometry};
use super::projection::ProjectedPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    fn of_segment(a: ProjectedPoint, b: ProjectedPoint) -> Self {
        Self { min_x: a.x.min(b.x), min_y: a.y.min(b.y), max_x: a.x.max(b.x), max_y: a.y.max(b.y) }
    }

    fn of_disc(c: ProjectedPoint, r: f64) -> Self {
        Self { min_x: c.x - r, min_y: c.y - r, max_x: c.x + r, max_y: c.y + r }
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.min_x <= o.max_x && o.min_x <= self.max_x && self.min_y <= o.max_y && o.min_y <= self.max_y
    }
}

/// A layer with a grid index over its items: points for point layers,
/// individual segments for polyline layers.
#[derive(Debug, Clone)]
pub struct IndexedLayer {
    layer: FeatureLayer,
    boxes: Vec<BBox>,
    segments: Vec<(ProjectedPoint, ProjectedPoint)>,
    origin: (f64, f64),
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

const MAX_CELLS_PER_ITEM: usize = 4;

/// Builds the bucket index for `layer`.
pub fn build_spatial_index(layer: FeatureLayer) -> IndexedLayer {
    let (boxes, segments): (Vec<BBox>, Vec<_>) = match &layer.geometry {
        LayerGeometry::Points(ps) => (
            ps.iter().map(|p| BBox::of_segment(*p, *p)).collect(),
            Vec::new(),
        ),
        LayerGeometry::Polylines(_) => {
            let segs: Vec<_> = layer.segments().collect();
            (segs.iter().map(|(a, b)| BBox::of_segment(*a, *b)).collect(), segs)
        }
    };

    if boxes.is_empty() {
        return IndexedLayer { layer, boxes, segments, origin: (0.0, 0.0), cell: 1.0, nx: 0, ny: 0, buckets: Vec::new() };
    }
    let ext = boxes.iter().fold(boxes[0], |acc, b| BBox {
        min_x: acc.min_x.min(b.min_x),
        min_y: acc.min_y.min(b.min_y),
        max_x: acc.max_x.max(b.max_x),
        max_y: acc.max_y.max(b.max_y),
    });
    let (w, h) = ((ext.max_x - ext.min_x).max(1.0), (ext.max_y - ext.min_y).max(1.0));
    let target_cells = (boxes.len() * MAX_CELLS_PER_ITEM).max(1) as f64;
    let cell = (w * h / target_cells).sqrt().max(1.0);
    let nx = ((w / cell).floor() as usize + 1).max(1);
    let ny = ((h / cell).floor() as usize + 1).max(1);

    let mut idx = IndexedLayer {
        layer,
        boxes,
        segments,
        origin: (ext.min_x, ext.min_y),
        cell,
        nx,
        ny,
        buckets: vec![Vec::new(); nx * ny],
    };
    for (i, b) in idx.boxes.iter().enumerate() {
        let (x0, y0, x1, y1) = idx.cell_range(b);
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                idx.buckets[cy * nx + cx].push(i as u32);
            }
        }
    }
    idx
}

impl IndexedLayer {
    pub fn layer(&self) -> &FeatureLayer {
        &self.layer
    }

    fn clamp_cell(&self, v: f64, origin: f64, n: usize) -> usize {
        let c = ((v - origin) / self.cell).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(n - 1)
        }
    }

    fn cell_range(&self, b: &BBox) -> (usize, usize, usize, usize) {
        (
            self.clamp_cell(b.min_x, self.origin.0, self.nx),
            self.clamp_cell(b.min_y, self.origin.1, self.ny),
            self.clamp_cell(b.max_x, self.origin.0, self.nx),
            self.clamp_cell(b.max_y, self.origin.1, self.ny),
        )
    }

    /// Item ids (points, or segments in line order) whose bounding boxes
    /// intersect the bounding box of the query disc, ascending.
    pub fn candidates(&self, center: ProjectedPoint, radius: f64) -> Vec<usize> {
        if self.buckets.is_empty() {
            return Vec::new();
        }
        let q = BBox::of_disc(center, radius);
        let (x0, y0, x1, y1) = self.cell_range(&q);
        let mut out = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                out.extend(
                    self.buckets[cy * self.nx + cx]
                        .iter()
                        .map(|&i| i as usize)
                        .filter(|&i| self.boxes[i].intersects(&q)),
                );
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn count_in_disc(&self, center: ProjectedPoint, radius: f64) -> usize {
        assert!(radius > 0.0, "buffer radius must be positive");
        let pts = self.layer.as_points();
        self.candidates(center, radius)
            .into_iter()
            .filter(|&i| in_disc(&pts[i], &center, radius))
            .count()
    }

    /// Clipped polyline length inside the disc, kilometres.
    pub fn clipped_length_km(&self, center: ProjectedPoint, radius: f64) -> f64 {
        assert!(radius > 0.0, "buffer radius must be positive");
        self.candidates(center, radius)
            .into_iter()
            .map(|i| {
                let (a, b) = self.segments[i];
                segment_overlap(a, b, center, radius)
            })
            .sum::<f64>()
            / 1000.0
    }
}
