//! Belgian Lambert 72: Lambert Conformal Conic with two standard parallels
//! on the International 1924 ellipsoid, preceded by a seven-parameter
//! Helmert shift from WGS84 to the Belge 1972 datum.
//!
//! LCC formulas follow Snyder, "Map Projections: A Working Manual"
//! (USGS PP 1395), pp. 107-109.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ARCSEC: f64 = std::f64::consts::PI / (180.0 * 3600.0);
const MAX_ITER: usize = 50;

/// Geographic coordinates in degrees (WGS84).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub long: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, long: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&long) {
            return Err(Error::Domain(format!("({lat}, {long}) is not a valid lat/long")));
        }
        Ok(Self { lat, long })
    }
}

/// Planar coordinates in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
}

impl ProjectedPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ProjectedPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub semi_major: f64,
    pub inverse_flattening: f64,
}

impl Ellipsoid {
    pub const INTERNATIONAL_1924: Self = Self {
        semi_major: 6_378_388.0,
        inverse_flattening: 297.0,
    };
    pub const WGS84: Self = Self {
        semi_major: 6_378_137.0,
        inverse_flattening: 298.257_223_563,
    };

    pub fn e2(&self) -> f64 {
        let f = 1.0 / self.inverse_flattening;
        f * (2.0 - f)
    }

    fn to_ecef(&self, lat: f64, lon: f64, h: f64) -> Vector3<f64> {
        let e2 = self.e2();
        let (sp, cp) = lat.sin_cos();
        let (sl, cl) = lon.sin_cos();
        let n = self.semi_major / (1.0 - e2 * sp * sp).sqrt();
        Vector3::new((n + h) * cp * cl, (n + h) * cp * sl, (n * (1.0 - e2) + h) * sp)
    }

    /// Returns (lat, lon, height), radians and metres.
    fn from_ecef(&self, v: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let e2 = self.e2();
        let a = self.semi_major;
        let p = v.x.hypot(v.y);
        let lon = v.y.atan2(v.x);
        let mut lat = v.z.atan2(p * (1.0 - e2));
        for _ in 0..MAX_ITER {
            let s = lat.sin();
            let n = a / (1.0 - e2 * s * s).sqrt();
            let h = if lat.cos().abs() > 1e-12 {
                p / lat.cos() - n
            } else {
                v.z.abs() - n * (1.0 - e2)
            };
            let next = v.z.atan2(p * (1.0 - e2 * n / (n + h)));
            if (next - lat).abs() < 1e-15 {
                let s = next.sin();
                let n = a / (1.0 - e2 * s * s).sqrt();
                let h = if next.cos().abs() > 1e-12 {
                    p / next.cos() - n
                } else {
                    v.z.abs() - n * (1.0 - e2)
                };
                return Ok((next, lon, h));
            }
            lat = next;
        }
        Err(Error::Numeric("geodetic latitude iteration did not converge".into()))
    }
}

/// Seven-parameter datum shift, position-vector convention (as PROJ's
/// `+towgs84`): `X_wgs84 = T + (1 + s) R X_local`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Helmert {
    /// Translations in metres.
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    /// Rotations in arc-seconds.
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    /// Scale in parts per million.
    pub scale_ppm: f64,
}

impl Helmert {
    /// Belge 1972 to WGS84, the shift PROJ attaches to EPSG:31370.
    pub const BELGE_1972_TO_WGS84: Self = Self {
        tx: -106.8686,
        ty: 52.2978,
        tz: -103.7239,
        rx: 0.3366,
        ry: -0.457,
        rz: 1.8422,
        scale_ppm: -1.2747,
    };

    fn matrix(&self) -> Matrix3<f64> {
        let (rx, ry, rz) = (self.rx * ARCSEC, self.ry * ARCSEC, self.rz * ARCSEC);
        let m = 1.0 + self.scale_ppm * 1e-6;
        Matrix3::new(1.0, -rz, ry, rz, 1.0, -rx, -ry, rx, 1.0) * m
    }

    fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }
}

/// Latitude/longitude window in which forward projection is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lat_min: f64,
    pub lat_max: f64,
    pub long_min: f64,
    pub long_max: f64,
}

/// Versioned Lambert 72 parameter block. Changing any value is a breaking
/// change to every projected artefact; bump `version` when doing so.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lambert72Config {
    pub version: u32,
    pub ellipsoid: Ellipsoid,
    /// Standard parallels, degrees.
    pub lat_1: f64,
    pub lat_2: f64,
    /// Latitude of the false origin, degrees.
    pub lat_0: f64,
    /// Central meridian, degrees.
    pub lon_0: f64,
    pub false_easting: f64,
    pub false_northing: f64,
    /// Shift from the projection datum to WGS84. `None` projects the input
    /// coordinates as if they were already on the projection datum.
    pub to_wgs84: Option<Helmert>,
    pub window: Window,
    /// Accept forward input outside `window`.
    pub permissive: bool,
}

impl Default for Lambert72Config {
    /// EPSG:31370 as defined in the PROJ database.
    fn default() -> Self {
        Self {
            version: 1,
            ellipsoid: Ellipsoid::INTERNATIONAL_1924,
            lat_1: 51.166_667_233_333_33,
            lat_2: 49.833_333_9,
            lat_0: 90.0,
            lon_0: 4.367_486_666_666_666,
            false_easting: 150_000.013,
            false_northing: 5_400_088.438,
            to_wgs84: Some(Helmert::BELGE_1972_TO_WGS84),
            window: Window {
                lat_min: 49.0,
                lat_max: 52.0,
                long_min: 2.0,
                long_max: 7.0,
            },
            permissive: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lambert72 {
    cfg: Lambert72Config,
    e: f64,
    n: f64,
    /// `a * F` in Snyder's notation.
    af: f64,
    rho0: f64,
    shift: Option<(Matrix3<f64>, Matrix3<f64>, Vector3<f64>)>,
}

fn msfn(e: f64, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    c / (1.0 - e * e * s * s).sqrt()
}

fn tsfn(e: f64, phi: f64) -> f64 {
    if (phi - FRAC_PI_2).abs() < 1e-15 {
        return 0.0;
    }
    let s = phi.sin();
    (FRAC_PI_4 - 0.5 * phi).tan() / ((1.0 - e * s) / (1.0 + e * s)).powf(0.5 * e)
}

impl Default for Lambert72 {
    fn default() -> Self {
        Self::new(Lambert72Config::default()).expect("default parameters are valid")
    }
}

impl Lambert72 {
    pub fn new(cfg: Lambert72Config) -> Result<Self> {
        let e = cfg.ellipsoid.e2().sqrt();
        let (p1, p2) = (cfg.lat_1.to_radians(), cfg.lat_2.to_radians());
        if (p1 - p2).abs() < 1e-12 || !(p1.abs() < FRAC_PI_2 && p2.abs() < FRAC_PI_2) {
            return Err(Error::Config("invalid standard parallels".into()));
        }
        let (m1, m2) = (msfn(e, p1), msfn(e, p2));
        let (t1, t2) = (tsfn(e, p1), tsfn(e, p2));
        let n = (m1.ln() - m2.ln()) / (t1.ln() - t2.ln());
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::Config("only northern-cone parameter sets are supported".into()));
        }
        let af = cfg.ellipsoid.semi_major * m1 / (n * t1.powf(n));
        let rho0 = af * tsfn(e, cfg.lat_0.to_radians()).powf(n);
        let shift = match cfg.to_wgs84 {
            Some(h) => {
                let m = h.matrix();
                let inv = m
                    .try_inverse()
                    .ok_or_else(|| Error::Config("singular datum rotation".into()))?;
                Some((m, inv, h.translation()))
            }
            None => None,
        };
        Ok(Self { cfg, e, n, af, rho0, shift })
    }

    pub fn config(&self) -> &Lambert72Config {
        &self.cfg
    }

    /// Cone constant `n`.
    pub fn cone_constant(&self) -> f64 {
        self.n
    }

    /// Forward conic mapping of projection-datum coordinates (radians).
    pub fn lcc_forward(&self, lat: f64, lon: f64) -> ProjectedPoint {
        let rho = self.af * tsfn(self.e, lat).powf(self.n);
        let theta = self.n * (lon - self.cfg.lon_0.to_radians());
        ProjectedPoint {
            x: self.cfg.false_easting + rho * theta.sin(),
            y: self.cfg.false_northing + self.rho0 - rho * theta.cos(),
        }
    }

    /// Inverse conic mapping to projection-datum coordinates (radians).
    pub fn lcc_inverse(&self, q: ProjectedPoint) -> Result<(f64, f64)> {
        let dx = q.x - self.cfg.false_easting;
        let dy = self.rho0 - (q.y - self.cfg.false_northing);
        let rho = dx.hypot(dy);
        let lon0 = self.cfg.lon_0.to_radians();
        if rho == 0.0 {
            return Ok((FRAC_PI_2, lon0));
        }
        let t = (rho / self.af).powf(1.0 / self.n);
        let lon = dx.atan2(dy) / self.n + lon0;
        let e = self.e;
        let mut lat = FRAC_PI_2 - 2.0 * t.atan();
        for _ in 0..MAX_ITER {
            let s = lat.sin();
            let next = FRAC_PI_2 - 2.0 * (t * ((1.0 - e * s) / (1.0 + e * s)).powf(0.5 * e)).atan();
            if (next - lat).abs() < 1e-15 {
                return Ok((next, lon));
            }
            lat = next;
        }
        Err(Error::Numeric(format!(
            "latitude iteration did not converge within {MAX_ITER} steps at ({}, {})",
            q.x, q.y
        )))
    }

    /// WGS84 degrees to Lambert 72 metres.
    pub fn project(&self, p: GeoPoint) -> Result<ProjectedPoint> {
        if !(p.lat.is_finite() && p.long.is_finite()) {
            return Err(Error::Domain("non-finite coordinates".into()));
        }
        let w = &self.cfg.window;
        let inside = (w.lat_min..=w.lat_max).contains(&p.lat) && (w.long_min..=w.long_max).contains(&p.long);
        if !inside && !self.cfg.permissive {
            return Err(Error::Domain(format!(
                "({}, {}) outside projection window lat [{}, {}], long [{}, {}]",
                p.lat, p.long, w.lat_min, w.lat_max, w.long_min, w.long_max
            )));
        }
        let (lat, lon) = (p.lat.to_radians(), p.long.to_radians());
        let (lat, lon) = match &self.shift {
            Some((_, inv, t)) => {
                let wgs = Ellipsoid::WGS84.to_ecef(lat, lon, 0.0);
                let local = inv * (wgs - t);
                let (la, lo, _) = self.cfg.ellipsoid.from_ecef(&local)?;
                (la, lo)
            }
            None => (lat, lon),
        };
        Ok(self.lcc_forward(lat, lon))
    }

    /// Lambert 72 metres to WGS84 degrees on the ellipsoid surface.
    pub fn inverse(&self, q: ProjectedPoint) -> Result<GeoPoint> {
        if !q.is_finite() {
            return Err(Error::Domain("non-finite projected coordinates".into()));
        }
        let (lat, lon) = self.lcc_inverse(q)?;
        let Some((m, _, t)) = &self.shift else {
            return Ok(GeoPoint { lat: lat.to_degrees(), long: lon.to_degrees() });
        };
        // Local ellipsoidal height is unknown; solve for the one that puts
        // the point on the WGS84 surface, which is what `project` assumes.
        let mut h_local = 0.0;
        for _ in 0..MAX_ITER {
            let wgs = m * self.cfg.ellipsoid.to_ecef(lat, lon, h_local) + t;
            let (la, lo, h) = Ellipsoid::WGS84.from_ecef(&wgs)?;
            // A micrometre; ECEF rounding is about 1e-9 m at this magnitude.
            if h.abs() < 1e-6 {
                return Ok(GeoPoint { lat: la.to_degrees(), long: lo.to_degrees() });
            }
            h_local -= h;
        }
        Err(Error::Numeric("datum height iteration did not converge".into()))
    }
}

/// Projects with the default EPSG:31370 parameter set.
pub fn project_to_lambert72(p: GeoPoint) -> Result<ProjectedPoint> {
    Lambert72::default().project(p)
}

pub fn inverse_lambert72(q: ProjectedPoint) -> Result<GeoPoint> {
    Lambert72::default().inverse(q)
}
