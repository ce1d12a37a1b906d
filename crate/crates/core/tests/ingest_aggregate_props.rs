use std::collections::BTreeMap;

use geofreq::aggregate::{aggregate_zones, ZoneTable};
use geofreq::ingest::{
    filter_max_claims, parse_policies, write_policies, Coverage, Fuel, ParseOptions, PolicyRecord, PolicyTable, Schema,
    Sex, Usage,
};
use proptest::prelude::*;

fn zone_strategy() -> impl Strategy<Value = (String, f64, f64)> {
    (1000u32..1012).prop_map(|pc| {
        // Centroid fixed per postcode.
        let lat = 50.0 + f64::from(pc - 1000) * 0.1;
        let long = 4.0 + f64::from(pc - 1000) * 0.05;
        (pc.to_string(), lat, long)
    })
}

prop_compose! {
    fn record()(
        (postcode, lat, long) in zone_strategy(),
        exposure in 0.001f64..=1.0,
        coverage in prop::sample::select(vec![Coverage::Tpl, Coverage::TplPlus, Coverage::TplPlusPlus]),
        ageph in 18u32..95,
        sex in prop::sample::select(vec![Sex::Female, Sex::Male]),
        bm in 0u8..=22,
        power in 10.0f64..250.0,
        agec in 0u32..40,
        fuel in prop::sample::select(vec![Fuel::Gasoline, Fuel::Diesel]),
        usage in prop::sample::select(vec![Usage::Private, Usage::Work]),
        fleet in any::<bool>(),
        nclaims in 0u32..6,
    ) -> PolicyRecord {
        PolicyRecord {
            exposure, coverage, ageph: f64::from(ageph), sex, bm, power, agec: f64::from(agec),
            fuel, usage, fleet, postcode, lat, long, nclaims,
        }
    }
}

fn roundtrip(records: &[PolicyRecord], opts: &ParseOptions) -> PolicyTable {
    let mut buf = Vec::new();
    write_policies(records, &mut buf, &Schema::default(), opts).unwrap();
    parse_policies(buf.as_slice(), &Schema::default(), opts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_parse_roundtrip(records in prop::collection::vec(record(), 0..60)) {
        let t = roundtrip(&records, &ParseOptions::default());
        prop_assert!(t.rejected.is_empty());
        prop_assert_eq!(&t.records, &records);
        let again = roundtrip(&t.records, &ParseOptions::default());
        prop_assert_eq!(again.records, t.records);
    }

    #[test]
    fn roundtrip_with_decimal_comma(records in prop::collection::vec(record(), 1..30)) {
        let opts = ParseOptions { delimiter: b';', decimal_mark: ',', strict: true };
        prop_assert_eq!(roundtrip(&records, &opts).records, records);
    }

    #[test]
    fn filter_is_an_idempotent_subset(records in prop::collection::vec(record(), 0..80), cap in 0u32..6) {
        let table = PolicyTable { rows_read: records.len(), records, rejected: Vec::new() };
        let once = filter_max_claims(&table, cap);
        prop_assert!(once.records.iter().all(|r| r.nclaims <= cap));
        prop_assert_eq!(once.len(), table.records.iter().filter(|r| r.nclaims <= cap).count());
        // Order preserved: the kept records appear in input order.
        let mut it = table.records.iter();
        prop_assert!(once.records.iter().all(|r| it.any(|s| s == r)));
        prop_assert_eq!(filter_max_claims(&once, cap).records, once.records.clone());
        prop_assert!(once.records.iter().all(|r| r.validate().is_ok()));
    }

    #[test]
    fn aggregation_matches_a_naive_oracle(records in prop::collection::vec(record(), 1..120)) {
        let zones = aggregate_zones(&records).unwrap();
        let mut groups: BTreeMap<&str, Vec<&PolicyRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry(&r.postcode).or_default().push(r);
        }
        prop_assert_eq!(zones.len(), groups.len());
        for (z, (pc, rs)) in zones.zones.iter().zip(&groups) {
            prop_assert_eq!(&z.postcode, pc);
            prop_assert_eq!(z.n_policies, rs.len());
            prop_assert_eq!(z.nclaims_ag, rs.iter().map(|r| u64::from(r.nclaims)).sum::<u64>());
            let expo: f64 = rs.iter().map(|r| r.exposure).sum();
            prop_assert!((z.expo_ag - expo).abs() <= 1e-12 * expo.max(1.0));
            let n = rs.len() as f64;
            let mean_age: f64 = rs.iter().map(|r| r.ageph).sum::<f64>() / n;
            prop_assert!((z.covariates["ageph_mean"] - mean_age).abs() <= 1e-9);
            let var: f64 = rs.iter().map(|r| (r.ageph - mean_age).powi(2)).sum::<f64>() / n;
            prop_assert!((z.covariates["ageph_sd"] - var.sqrt()).abs() <= 1e-9);
            let mut bms: Vec<f64> = rs.iter().map(|r| f64::from(r.bm)).collect();
            bms.sort_by(f64::total_cmp);
            let k = bms.len();
            let median = if k % 2 == 1 { bms[k / 2] } else { 0.5 * (bms[k / 2 - 1] + bms[k / 2]) };
            prop_assert_eq!(z.covariates["bm_median"], median);
            for var in ["coverage", "sex", "fuel", "use", "fleet"] {
                let total: f64 = z.proportions.iter().filter(|(k, _)| k.starts_with(&format!("{var}_"))).map(|(_, v)| v).sum();
                prop_assert!((total - 1.0).abs() < 1e-12, "{} shares sum to {}", var, total);
            }
            let tpl = rs.iter().filter(|r| r.coverage == Coverage::Tpl).count() as f64 / n;
            prop_assert!((z.proportions["coverage_TPL_prop"] - tpl).abs() < 1e-15);
        }
    }

    #[test]
    fn zone_table_csv_roundtrip(records in prop::collection::vec(record(), 1..60)) {
        let zones = aggregate_zones(&records).unwrap();
        let mut buf = Vec::new();
        zones.write_csv(&mut buf).unwrap();
        prop_assert_eq!(ZoneTable::read_csv(buf.as_slice()).unwrap(), zones);
    }
}

#[test]
fn header_only_gives_an_empty_table() {
    let mut buf = Vec::new();
    write_policies(&[], &mut buf, &Schema::default(), &ParseOptions::default()).unwrap();
    let t = parse_policies(buf.as_slice(), &Schema::default(), &ParseOptions::default()).unwrap();
    assert!(t.is_empty() && t.rejected.is_empty());
}

#[test]
fn out_of_range_exposure_is_reported_with_its_line() {
    let mut buf = Vec::new();
    let r = PolicyRecord {
        exposure: 0.5,
        coverage: Coverage::Tpl,
        ageph: 40.0,
        sex: Sex::Male,
        bm: 3,
        power: 70.0,
        agec: 5.0,
        fuel: Fuel::Diesel,
        usage: Usage::Private,
        fleet: false,
        postcode: "1000".into(),
        lat: 50.8,
        long: 4.35,
        nclaims: 1,
    };
    write_policies(&[r.clone(), r], &mut buf, &Schema::default(), &ParseOptions::default()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[2] = lines[2].replacen("0.5", "1.5", 1);
    let t = parse_policies(lines.join("\n").as_bytes(), &Schema::default(), &ParseOptions::default()).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t.rejected.len(), 1);
    assert_eq!(t.rejected[0].line, 3);
    assert!(t.rejected[0].message.contains("exposure"), "{}", t.rejected[0].message);
    let strict = ParseOptions { strict: true, ..Default::default() };
    assert!(parse_policies(lines.join("\n").as_bytes(), &Schema::default(), &strict).is_err());
}
