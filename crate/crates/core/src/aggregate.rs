//! Collapse policy records to one row per postcode.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{Category, PolicyRecord};
use crate::stats;

/// Coordinates of records in one zone may differ by at most this many degrees.
pub const CENTROID_TOLERANCE_DEG: f64 = 1e-9;

/// Per-postcode summary of the policies it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneAggregate {
    pub postcode: String,
    pub postcode_2: String,
    pub lat: f64,
    pub long: f64,
    pub n_policies: usize,
    /// Summed exposure in policy-years.
    pub expo_ag: f64,
    pub nclaims_ag: u64,
    /// `nclaims_ag / expo_ag`. Kept for reporting; never a predictor.
    pub freq: f64,
    /// Numeric summaries keyed by column name (`ageph_mean`, `bm_sd`, ...).
    pub covariates: BTreeMap<String, f64>,
    /// Category shares keyed by column name (`coverage_TPL_prop`, ...).
    pub proportions: BTreeMap<String, f64>,
}

impl ZoneAggregate {
    /// Checks the zone-level invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Inconsistent(format!("zone {}: {m}", self.postcode)));
        if !(self.expo_ag > 0.0) {
            return fail(format!("expo_ag must be positive, got {}", self.expo_ag));
        }
        let freq = self.nclaims_ag as f64 / self.expo_ag;
        if (freq - self.freq).abs() > 1e-12 * freq.abs().max(1.0) {
            return fail(format!("freq {} != nclaims_ag/expo_ag {}", self.freq, freq));
        }
        for (name, v) in &self.covariates {
            if !v.is_finite() || (name.ends_with("_sd") && *v < 0.0) {
                return fail(format!("bad summary {name} = {v}"));
            }
        }
        for (var, total) in proportion_sums(&self.proportions) {
            if (total - 1.0).abs() > 1e-9 {
                return fail(format!("{var} proportions sum to {total}"));
            }
        }
        Ok(())
    }
}

/// Variable name of a proportion column: the text before the first `_`.
pub fn proportion_variable(column: &str) -> &str {
    column.split('_').next().unwrap_or(column)
}

fn proportion_sums(props: &BTreeMap<String, f64>) -> BTreeMap<&str, f64> {
    let mut sums = BTreeMap::new();
    for (name, v) in props {
        *sums.entry(proportion_variable(name)).or_insert(0.0) += v;
    }
    sums
}

/// Zones in ascending postcode order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZoneTable {
    pub zones: Vec<ZoneAggregate>,
}

const ID_COLUMNS: [&str; 8] = [
    "postcode",
    "postcode_2",
    "lat",
    "long",
    "n_policies",
    "expo_ag",
    "nclaims_ag",
    "freq",
];

impl ZoneTable {
    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn position(&self, postcode: &str) -> Option<usize> {
        self.zones
            .binary_search_by(|z| z.postcode.as_str().cmp(postcode))
            .ok()
    }

    /// Union of covariate column names across zones, sorted.
    pub fn covariate_columns(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .zones
            .iter()
            .flat_map(|z| z.covariates.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn proportion_columns(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .zones
            .iter()
            .flat_map(|z| z.proportions.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Writes the table with a deterministic column order: identifiers,
    /// exposure and claims, numeric summaries, then proportions (each
    /// group alphabetical).
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let covs = self.covariate_columns();
        let props = self.proportion_columns();
        let mut w = csv::Writer::from_writer(sink);
        let header: Vec<&str> = ID_COLUMNS
            .iter()
            .copied()
            .chain(covs.iter().map(String::as_str))
            .chain(props.iter().map(String::as_str))
            .collect();
        w.write_record(&header)?;
        for z in &self.zones {
            let mut row = vec![
                z.postcode.clone(),
                z.postcode_2.clone(),
                z.lat.to_string(),
                z.long.to_string(),
                z.n_policies.to_string(),
                z.expo_ag.to_string(),
                z.nclaims_ag.to_string(),
                z.freq.to_string(),
            ];
            for c in &covs {
                row.push(z.covariates.get(c).map_or_else(String::new, f64::to_string));
            }
            for c in &props {
                row.push(z.proportions.get(c).map_or_else(String::new, f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let header = r.headers()?.clone();
        let pos = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("zone table lacks column {name:?}")))
        };
        let idx: Vec<usize> = ID_COLUMNS.iter().map(|n| pos(n)).collect::<Result<_>>()?;
        let extra: Vec<(usize, &str)> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| !ID_COLUMNS.contains(h))
            .collect();

        let mut zones = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let get = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<f64> {
                get(i).parse::<f64>().map_err(|_| Error::Row {
                    line,
                    message: format!("unparseable {} {:?}", &header[i], get(i)),
                })
            };
            let nclaims_ag = get(idx[6]).parse::<u64>().map_err(|_| Error::Row {
                line,
                message: format!("unparseable nclaims_ag {:?}", get(idx[6])),
            })?;
            let n_policies = get(idx[4]).parse::<usize>().map_err(|_| Error::Row {
                line,
                message: format!("unparseable n_policies {:?}", get(idx[4])),
            })?;
            let mut z = ZoneAggregate {
                postcode: get(idx[0]).to_string(),
                postcode_2: get(idx[1]).to_string(),
                lat: num(idx[2])?,
                long: num(idx[3])?,
                n_policies,
                expo_ag: num(idx[5])?,
                nclaims_ag,
                freq: num(idx[7])?,
                covariates: BTreeMap::new(),
                proportions: BTreeMap::new(),
            };
            for &(i, name) in &extra {
                if get(i).is_empty() {
                    continue;
                }
                let v = num(i)?;
                if name.ends_with("_prop") {
                    z.proportions.insert(name.to_string(), v);
                } else {
                    z.covariates.insert(name.to_string(), v);
                }
            }
            zones.push(z);
        }
        zones.sort_by(|a, b| a.postcode.cmp(&b.postcode));
        if let Some(w) = zones.windows(2).find(|w| w[0].postcode == w[1].postcode) {
            return Err(Error::DuplicateZone(w[0].postcode.clone()));
        }
        Ok(Self { zones })
    }
}

/// Two-digit region code: the first two characters of the postcode.
pub fn derive_region_code(postcode: &str) -> Result<String> {
    let prefix: Vec<char> = postcode.chars().take(2).collect();
    if prefix.len() < 2 || !prefix.iter().all(char::is_ascii_digit) {
        return Err(Error::Format(format!(
            "postcode {postcode:?} does not start with two digits"
        )));
    }
    Ok(prefix.into_iter().collect())
}

const NUMERIC: [(&str, fn(&PolicyRecord) -> f64); 4] = [
    ("ageph", |r| r.ageph),
    ("bm", |r| f64::from(r.bm)),
    ("power", |r| r.power),
    ("agec", |r| r.agec),
];

fn add_shares<C: Category>(
    out: &mut BTreeMap<String, f64>,
    records: &[&PolicyRecord],
    value: impl Fn(&PolicyRecord) -> C,
) {
    let n = records.len() as f64;
    for level in C::LEVELS {
        let count = records.iter().filter(|r| value(r) == *level).count();
        out.insert(
            format!("{}_{}_prop", C::VARIABLE, level.label()),
            count as f64 / n,
        );
    }
}

fn aggregate_one(postcode: &str, records: &[&PolicyRecord]) -> Result<ZoneAggregate> {
    let first = records[0];
    if let Some(bad) = records.iter().find(|r| {
        (r.lat - first.lat).abs() > CENTROID_TOLERANCE_DEG
            || (r.long - first.long).abs() > CENTROID_TOLERANCE_DEG
    }) {
        return Err(Error::Inconsistent(format!(
            "zone {postcode}: coordinates ({}, {}) disagree with ({}, {})",
            bad.lat, bad.long, first.lat, first.long
        )));
    }

    let expo_ag = stats::sum(records.iter().map(|r| r.exposure));
    let nclaims_ag: u64 = records.iter().map(|r| u64::from(r.nclaims)).sum();

    let mut covariates = BTreeMap::new();
    for (name, get) in NUMERIC {
        let v: Vec<f64> = records.iter().map(|r| get(r)).collect();
        covariates.insert(format!("{name}_mean"), stats::mean(&v));
        covariates.insert(format!("{name}_median"), stats::median(&v));
        covariates.insert(format!("{name}_sd"), stats::population_sd(&v));
    }

    let mut proportions = BTreeMap::new();
    add_shares(&mut proportions, records, |r| r.coverage);
    add_shares(&mut proportions, records, |r| r.sex);
    add_shares(&mut proportions, records, |r| r.fuel);
    add_shares(&mut proportions, records, |r| r.usage);
    let n = records.len() as f64;
    let fleet = records.iter().filter(|r| r.fleet).count() as f64;
    proportions.insert("fleet_0_prop".into(), (n - fleet) / n);
    proportions.insert("fleet_1_prop".into(), fleet / n);

    Ok(ZoneAggregate {
        postcode: postcode.to_string(),
        postcode_2: derive_region_code(postcode)?,
        lat: first.lat,
        long: first.long,
        n_policies: records.len(),
        expo_ag,
        nclaims_ag,
        freq: nclaims_ag as f64 / expo_ag,
        covariates,
        proportions,
    })
}

/// One [`ZoneAggregate`] per distinct postcode, ascending.
pub fn aggregate_zones(records: &[PolicyRecord]) -> Result<ZoneTable> {
    if records.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty policy table".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&PolicyRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.postcode.as_str()).or_default().push(r);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let zones = groups
        .par_iter()
        .map(|(pc, recs)| aggregate_one(pc, recs))
        .collect::<Result<Vec<_>>>()?;
    Ok(ZoneTable { zones })
}
