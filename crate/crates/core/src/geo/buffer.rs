//! Exact disc queries: point membership and segment/disc overlap length.

use super::layer::FeatureLayer;
use super::projection::ProjectedPoint;

/// Boundary-inclusive disc membership.
#[inline]
pub fn in_disc(p: &ProjectedPoint, center: &ProjectedPoint, radius: f64) -> bool {
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    dx * dx + dy * dy <= radius * radius
}

/// Length in metres of the part of segment `a -> b` inside the disc.
///
/// Works in arc-length along the segment: with `s` the distance from `a`
/// to the foot of the perpendicular from the centre and `d` the distance
/// from the centre to the supporting line, the line meets the disc on
/// `[s - h, s + h]` with `h = sqrt(r^2 - d^2)`; the result is that
/// interval clamped to `[0, L]`.
pub fn segment_overlap(a: ProjectedPoint, b: ProjectedPoint, center: ProjectedPoint, radius: f64) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len = vx.hypot(vy);
    if len == 0.0 {
        return 0.0;
    }
    let (ux, uy) = (vx / len, vy / len);
    let (wx, wy) = (center.x - a.x, center.y - a.y);
    let s = wx * ux + wy * uy;
    let d = wx * uy - wy * ux;
    let h2 = radius * radius - d * d;
    if h2 <= 0.0 {
        return 0.0;
    }
    let h = h2.sqrt();
    let lo = (s - h).max(0.0);
    let hi = (s + h).min(len);
    (hi - lo).max(0.0)
}

/// Total polyline length inside the disc, in kilometres.
pub fn clip_length_in_buffer(layer: &FeatureLayer, center: ProjectedPoint, radius: f64) -> f64 {
    assert!(radius > 0.0, "buffer radius must be positive");
    layer
        .segments()
        .map(|(a, b)| segment_overlap(a, b, center, radius))
        .sum::<f64>()
        / 1000.0
}

/// Number of points at distance `<= radius` from `center`.
pub fn count_points_in_buffer(layer: &FeatureLayer, center: ProjectedPoint, radius: f64) -> usize {
    assert!(radius > 0.0, "buffer radius must be positive");
    layer.as_points().iter().filter(|p| in_disc(p, &center, radius)).count()
}
