//! Share of a postcode's area that a neighbourhood can cover at most.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Neighborhood {
    Disc { radius_km: f64 },
    /// Axis-aligned square with the given apothem (half side).
    Square { apothem_km: f64 },
}

impl Neighborhood {
    pub fn area_km2(&self) -> f64 {
        match *self {
            Neighborhood::Disc { radius_km } => std::f64::consts::PI * radius_km * radius_km,
            Neighborhood::Square { apothem_km } => (2.0 * apothem_km) * (2.0 * apothem_km),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Neighborhood::Disc { radius_km } => format!("disc_r{radius_km}"),
            Neighborhood::Square { apothem_km } => format!("square_a{apothem_km}"),
        }
    }
}

/// `min(1, neighbourhood area / postcode area)`.
pub fn coverage_ratio(neighborhood: Neighborhood, postcode_area_km2: f64) -> Result<f64> {
    if !(postcode_area_km2 > 0.0) {
        return Err(Error::Domain(format!("postcode area must be positive, got {postcode_area_km2}")));
    }
    Ok((neighborhood.area_km2() / postcode_area_km2).min(1.0))
}
