//! Synthetic zones with known Poisson structure, random geometry and
//! brute-force reference implementations.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{derive_region_code, ZoneAggregate, ZoneTable};
use crate::error::{Error, Result};
use crate::features::{assemble, Block, BlockSources, FeatureMatrix};
use crate::geo::layer::FeatureLayer;
use crate::geo::projection::ProjectedPoint;
use crate::ingest::{Coverage, Fuel, PolicyRecord, Sex, Usage};

/// Largest Poisson rate sampled in one inverse-transform pass.
const POISSON_CHUNK: f64 = 500.0;

/// Seeded ChaCha20 stream with explicit uniform and normal transforms.
#[derive(Debug, Clone)]
pub struct SynthRng(ChaCha20Rng);

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        SynthRng(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Independent substream `stream` of `seed`.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        r.set_stream(stream);
        SynthRng(r)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// Box–Muller; one draw per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Inverse-transform sampling; rates above 500 are split into chunks.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        assert!(lambda >= 0.0 && lambda.is_finite(), "Poisson rate {lambda}");
        let mut rest = lambda;
        let mut total = 0;
        while rest > 0.0 {
            let l = rest.min(POISSON_CHUNK);
            rest -= l;
            total += self.poisson_small(l);
        }
        total
    }

    fn poisson_small(&mut self, lambda: f64) -> u64 {
        let u = self.uniform();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let cap = (lambda + 40.0 * lambda.sqrt() + 50.0) as u64;
        while u >= cdf && k < cap {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_zones: usize,
    /// Intercept followed by one slope per generated feature.
    pub beta: Vec<f64>,
    pub exposure_min: f64,
    pub exposure_max: f64,
    /// Extra log-rate per degree of latitude above 50.5.
    pub spatial_trend: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_zones: 583,
            beta: vec![0.13f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0],
            exposure_min: 50.0,
            exposure_max: 500.0,
            spatial_trend: 0.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_zones < 6 {
            return Err(Error::Config(format!("need at least 6 zones, got {}", self.n_zones)));
        }
        if self.n_zones > 89_999 {
            return Err(Error::Config("at most 89999 synthetic zones".into()));
        }
        if self.beta.is_empty() {
            return Err(Error::Config("beta must contain the intercept".into()));
        }
        if !(self.exposure_min > 0.0 && self.exposure_max >= self.exposure_min) {
            return Err(Error::Config("exposure range must be positive and ordered".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn feature_names(&self) -> Vec<String> {
        let p = self.n_features();
        let width = p.to_string().len();
        (1..=p).map(|j| format!("x{j:0width$}")).collect()
    }
}

/// Per-zone draws shared by the zone and policy generators.
struct ZoneDraw {
    postcode: String,
    lat: f64,
    long: f64,
    exposure: f64,
    x: Vec<f64>,
    y: u64,
}

fn draw_zone(cfg: &SynthConfig, i: usize) -> ZoneDraw {
    let mut rng = SynthRng::substream(cfg.seed, i as u64);
    let x: Vec<f64> = (0..cfg.n_features()).map(|_| rng.normal()).collect();
    let exposure = rng.range(cfg.exposure_min, cfg.exposure_max);
    let lat = rng.range(49.6, 51.4);
    let long = rng.range(2.7, 6.3);
    let eta = cfg.beta[0] + x.iter().zip(&cfg.beta[1..]).map(|(a, b)| a * b).sum::<f64>() + cfg.spatial_trend * (lat - 50.5);
    let y = rng.poisson(exposure * eta.exp());
    ZoneDraw { postcode: format!("{}", 10_000 + i), lat, long, exposure, x, y }
}

/// Zone table whose covariates are the generated features, the matching
/// design matrix, and the true coefficients.
pub fn generate_zones(cfg: &SynthConfig) -> Result<(ZoneTable, FeatureMatrix, Vec<f64>)> {
    cfg.validate()?;
    let names = cfg.feature_names();
    let zones = (0..cfg.n_zones)
        .map(|i| {
            let d = draw_zone(cfg, i);
            Ok(ZoneAggregate {
                postcode_2: derive_region_code(&d.postcode)?,
                postcode: d.postcode,
                lat: d.lat,
                long: d.long,
                n_policies: d.exposure.ceil() as usize,
                expo_ag: d.exposure,
                nclaims_ag: d.y,
                freq: d.y as f64 / d.exposure,
                covariates: names.iter().cloned().zip(d.x).collect::<BTreeMap<_, _>>(),
                proportions: BTreeMap::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ZoneTable { zones };
    let m = assemble(&table, &[Block::Base], &BlockSources::default())?;
    Ok((table, m, cfg.beta.clone()))
}

/// Policy-level rows whose zone totals follow [`generate_zones`].
///
/// Each zone's exposure is spread evenly over `ceil(exposure)` policies and
/// its claims are assigned to policies at random.
pub fn generate_policies(cfg: &SynthConfig) -> Result<Vec<PolicyRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for i in 0..cfg.n_zones {
        let d = draw_zone(cfg, i);
        let k = d.exposure.ceil().max(1.0) as usize;
        let mut rng = SynthRng::substream(cfg.seed ^ 0x5eed_0000_0000_0000, i as u64);
        let mut claims = vec![0u32; k];
        for _ in 0..d.y {
            claims[rng.below(k)] += 1;
        }
        for c in claims {
            out.push(PolicyRecord {
                exposure: d.exposure / k as f64,
                coverage: [Coverage::Tpl, Coverage::TplPlus, Coverage::TplPlusPlus][rng.below(3)],
                ageph: (18 + rng.below(73)) as f64,
                sex: if rng.uniform() < 0.26 { Sex::Female } else { Sex::Male },
                bm: (rng.uniform().powi(3) * 23.0).min(22.0) as u8,
                power: (30 + rng.below(170)) as f64,
                agec: rng.below(31) as f64,
                fuel: if rng.uniform() < 0.69 { Fuel::Gasoline } else { Fuel::Diesel },
                usage: if rng.uniform() < 0.95 { Usage::Private } else { Usage::Work },
                fleet: rng.uniform() < 0.03,
                postcode: d.postcode.clone(),
                lat: d.lat,
                long: d.long,
                nclaims: c,
            });
        }
    }
    Ok(out)
}

/// Brute-force `|p − c| ≤ r` count.
pub fn oracle_count_in_disc(points: &[ProjectedPoint], center: ProjectedPoint, r: f64) -> usize {
    points.iter().filter(|p| (p.x - center.x).hypot(p.y - center.y) <= r).count()
}

/// Midpoint-rule estimate of the length of `segments` inside the disc, in km.
pub fn oracle_clip_length(
    segments: &[(ProjectedPoint, ProjectedPoint)],
    center: ProjectedPoint,
    r: f64,
    samples: usize,
) -> f64 {
    let mut total = 0.0;
    for (a, b) in segments {
        let len = (b.x - a.x).hypot(b.y - a.y);
        let inside = (0..samples)
            .filter(|k| {
                let t = (*k as f64 + 0.5) / samples as f64;
                let x = a.x + t * (b.x - a.x);
                let y = a.y + t * (b.y - a.y);
                (x - center.x).hypot(y - center.y) <= r
            })
            .count();
        total += len * inside as f64 / samples as f64;
    }
    total / 1000.0
}

/// Exhaustive search over every column and every midpoint between distinct
/// sorted values. Ties go to the lowest column, then the lowest threshold.
/// Returns `None` when no split has positive gain.
pub fn oracle_best_split(x: &DMatrix<f64>, g: &[f64], h: &[f64], lambda: f64) -> Option<(usize, f64, f64)> {
    let n = x.nrows();
    let gt: f64 = g.iter().sum();
    let ht: f64 = h.iter().sum();
    let parent = gt * gt / (ht + lambda);
    let mut best: Option<(usize, f64, f64)> = None;
    for j in 0..x.ncols() {
        let mut vals: Vec<f64> = x.column(j).iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if x[(i, j)] < thr {
                    gl += g[i];
                    hl += h[i];
                } else {
                    gr += g[i];
                    hr += h[i];
                }
            }
            let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
            if gain > 0.0 && best.is_none_or(|b| gain > b.2) {
                best = Some((j, thr, gain));
            }
        }
    }
    best
}

/// Points uniform in `[x0, x1] × [y0, y1]`.
pub fn random_points(rng: &mut SynthRng, n: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<ProjectedPoint> {
    (0..n).map(|_| ProjectedPoint::new(rng.range(x0, x1), rng.range(y0, y1))).collect()
}

/// Two-vertex segments with endpoints uniform in the box.
pub fn random_segments(rng: &mut SynthRng, n: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<(ProjectedPoint, ProjectedPoint)> {
    (0..n)
        .map(|_| {
            let a = ProjectedPoint::new(rng.range(x0, x1), rng.range(y0, y1));
            let b = ProjectedPoint::new(rng.range(x0, x1), rng.range(y0, y1));
            (a, b)
        })
        .collect()
}

/// `h` horizontal and `v` vertical roads on a `spacing` lattice; each
/// crossing is a shared vertex and the roads overhang by one spacing.
pub fn grid_roads(h: usize, v: usize, spacing: f64) -> FeatureLayer {
    let mut lines = Vec::with_capacity(h + v);
    for j in 0..h {
        let y = j as f64 * spacing;
        lines.push((-1..=v as i64).map(|i| ProjectedPoint::new(i as f64 * spacing, y)).collect());
    }
    for i in 0..v {
        let x = i as f64 * spacing;
        lines.push((-1..=h as i64).map(|j| ProjectedPoint::new(x, j as f64 * spacing)).collect());
    }
    FeatureLayer::polylines("road", lines).expect("finite lattice")
}
