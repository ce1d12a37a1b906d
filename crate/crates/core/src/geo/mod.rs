//! Geographic feature construction: projection, layers, land-cover masking
//! and buffer metrics.

pub mod buffer;
pub mod coverage;
pub mod env;
pub mod index;
pub mod intersections;
pub mod landcover;
pub mod layer;
pub mod projection;

pub use buffer::{clip_length_in_buffer, count_points_in_buffer};
pub use coverage::{coverage_ratio, Neighborhood};
pub use env::{env_features, EnvFeatureVector, EnvTable, LayerSet, Radius};
pub use index::{build_spatial_index, IndexedLayer};
pub use intersections::detect_intersections;
pub use landcover::{mask_by_landcover, read_esri_ascii, LandCoverGrid, MaskOutcome};
pub use layer::{FeatureLayer, LayerCrs, LayerGeometry, LayerKind};
pub use projection::{inverse_lambert72, project_to_lambert72, GeoPoint, Lambert72, Lambert72Config, ProjectedPoint};
