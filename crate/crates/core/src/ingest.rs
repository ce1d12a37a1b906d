//! Policy-level input: typed records, delimited-text parsing and the
//! claim-count filter.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A categorical policy attribute with a closed set of labels.
pub trait Category: Copy + Eq + Ord + Sized + 'static {
    /// Variable name used in column headers (`coverage`, `sex`, ...).
    const VARIABLE: &'static str;
    const LEVELS: &'static [Self];

    fn label(self) -> &'static str;

    fn from_label(s: &str) -> Option<Self> {
        Self::LEVELS.iter().copied().find(|l| l.label() == s)
    }
}

macro_rules! category {
    ($name:ident, $var:literal, { $($variant:ident => $label:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl Category for $name {
            const VARIABLE: &'static str = $var;
            const LEVELS: &'static [Self] = &[$($name::$variant),+];

            fn label(self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }
        }
    };
}

category!(Coverage, "coverage", { Tpl => "TPL", TplPlus => "TPL+", TplPlusPlus => "TPL++" });
category!(Sex, "sex", { Female => "female", Male => "male" });
category!(Fuel, "fuel", { Gasoline => "gasoline", Diesel => "diesel" });
category!(Usage, "use", { Private => "private", Work => "work" });

/// One policy-year row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub exposure: f64,
    pub coverage: Coverage,
    pub ageph: f64,
    pub sex: Sex,
    pub bm: u8,
    pub power: f64,
    pub agec: f64,
    pub fuel: Fuel,
    pub usage: Usage,
    pub fleet: bool,
    pub postcode: String,
    pub lat: f64,
    pub long: f64,
    pub nclaims: u32,
}

impl PolicyRecord {
    /// Checks the record-level invariants, returning the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.exposure > 0.0 && self.exposure <= 1.0) {
            return Err(format!("exposure out of (0,1]: {}", self.exposure));
        }
        if self.bm > 22 {
            return Err(format!("bm out of [0,22]: {}", self.bm));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("lat out of [-90,90]: {}", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.long) {
            return Err(format!("long out of [-180,180]: {}", self.long));
        }
        for (name, v) in [("ageph", self.ageph), ("power", self.power), ("agec", self.agec)] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        if self.postcode.is_empty() {
            return Err("empty postcode".into());
        }
        Ok(())
    }
}

/// Maps each logical field to the header name used in the input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub exposure: String,
    pub coverage: String,
    pub ageph: String,
    pub sex: String,
    pub bm: String,
    pub power: String,
    pub agec: String,
    pub fuel: String,
    #[serde(rename = "use")]
    pub usage: String,
    pub fleet: String,
    pub postcode: String,
    pub lat: String,
    pub long: String,
    pub nclaims: String,
}

impl Default for Schema {
    /// Column names of the beMTPL97 export.
    fn default() -> Self {
        Self {
            exposure: "expo".into(),
            coverage: "coverage".into(),
            ageph: "ageph".into(),
            sex: "sex".into(),
            bm: "bm".into(),
            power: "power".into(),
            agec: "agec".into(),
            fuel: "fuel".into(),
            usage: "use".into(),
            fleet: "fleet".into(),
            postcode: "postcode".into(),
            lat: "lat".into(),
            long: "long".into(),
            nclaims: "nclaims".into(),
        }
    }
}

impl Schema {
    fn columns(&self) -> [&str; 14] {
        [
            &self.exposure,
            &self.coverage,
            &self.ageph,
            &self.sex,
            &self.bm,
            &self.power,
            &self.agec,
            &self.fuel,
            &self.usage,
            &self.fleet,
            &self.postcode,
            &self.lat,
            &self.long,
            &self.nclaims,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub delimiter: u8,
    pub decimal_mark: char,
    /// Abort on the first bad row instead of skipping it.
    pub strict: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            decimal_mark: '.',
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTable {
    pub records: Vec<PolicyRecord>,
    /// Rows skipped during parsing, with their 1-based line numbers.
    pub rejected: Vec<RowIssue>,
    pub rows_read: usize,
}

impl PolicyTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

struct ColumnIndex([usize; 14]);

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, schema: &Schema) -> Result<Self> {
        let mut idx = [0usize; 14];
        for (slot, name) in idx.iter_mut().zip(schema.columns()) {
            *slot = header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("missing mapped column {name:?}")))?;
        }
        Ok(Self(idx))
    }
}

fn field<'a>(row: &'a csv::StringRecord, idx: usize, name: &str) -> std::result::Result<&'a str, String> {
    match row.get(idx).map(str::trim) {
        Some(s) if !s.is_empty() && s != "NA" => Ok(s),
        _ => Err(format!("missing field {name}")),
    }
}

fn number(s: &str, name: &str, decimal_mark: char) -> std::result::Result<f64, String> {
    let parsed = if decimal_mark == '.' {
        s.parse::<f64>()
    } else {
        s.replace(decimal_mark, ".").parse::<f64>()
    };
    parsed.map_err(|_| format!("unparseable {name}: {s:?}"))
}

fn integer(s: &str, name: &str, decimal_mark: char) -> std::result::Result<i64, String> {
    let v = number(s, name, decimal_mark)?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(format!("{name} is not an integer: {s:?}"));
    }
    Ok(v as i64)
}

fn category<C: Category>(s: &str) -> std::result::Result<C, String> {
    C::from_label(s).ok_or_else(|| format!("unknown {} label {s:?}", C::VARIABLE))
}

fn boolean(s: &str, name: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(format!("unknown {name} label {s:?}")),
    }
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnIndex, schema: &Schema, dm: char) -> std::result::Result<PolicyRecord, String> {
    let c = &cols.0;
    let names = schema.columns();
    let f = |i: usize| field(row, c[i], names[i]);

    let bm = integer(f(4)?, "bm", dm)?;
    if !(0..=22).contains(&bm) {
        return Err(format!("bm out of [0,22]: {bm}"));
    }
    let nclaims = integer(f(13)?, "nclaims", dm)?;
    if nclaims < 0 {
        return Err(format!("negative nclaims: {nclaims}"));
    }
    let record = PolicyRecord {
        exposure: number(f(0)?, "exposure", dm)?,
        coverage: category(f(1)?)?,
        ageph: number(f(2)?, "ageph", dm)?,
        sex: category(f(3)?)?,
        bm: bm as u8,
        power: number(f(5)?, "power", dm)?,
        agec: number(f(6)?, "agec", dm)?,
        fuel: category(f(7)?)?,
        usage: category(f(8)?)?,
        fleet: boolean(f(9)?, "fleet")?,
        postcode: f(10)?.to_string(),
        lat: number(f(11)?, "lat", dm)?,
        long: number(f(12)?, "long", dm)?,
        nclaims: u32::try_from(nclaims).map_err(|_| format!("nclaims too large: {nclaims}"))?,
    };
    record.validate()?;
    Ok(record)
}

fn check_options(opts: &ParseOptions) -> Result<()> {
    if opts.decimal_mark as u32 == opts.delimiter as u32 {
        return Err(Error::Config("delimiter and decimal mark must differ".into()));
    }
    Ok(())
}

/// Parses policy records from delimited text with a header row.
///
/// Rows that fail to parse or violate a record invariant are collected in
/// [`PolicyTable::rejected`]; with `opts.strict` the first such row aborts
/// with [`Error::Row`].
pub fn parse_policies<R: Read>(source: R, schema: &Schema, opts: &ParseOptions) -> Result<PolicyTable> {
    check_options(opts)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let cols = ColumnIndex::resolve(&header, schema)?;

    let mut table = PolicyTable::default();
    let mut row = csv::StringRecord::new();
    while reader.read_record(&mut row)? {
        table.rows_read += 1;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &cols, schema, opts.decimal_mark) {
            Ok(r) => table.records.push(r),
            Err(message) if opts.strict => return Err(Error::Row { line, message }),
            Err(message) => table.rejected.push(RowIssue { line, message }),
        }
    }
    if !table.rejected.is_empty() {
        log::warn!("skipped {} of {} policy rows", table.rejected.len(), table.rows_read);
    }
    Ok(table)
}

fn fmt_num(v: f64, dm: char) -> String {
    let s = v.to_string();
    if dm == '.' {
        s
    } else {
        s.replace('.', &dm.to_string())
    }
}

/// Writes records in the layout [`parse_policies`] reads back.
pub fn write_policies<W: Write>(records: &[PolicyRecord], sink: W, schema: &Schema, opts: &ParseOptions) -> Result<()> {
    check_options(opts)?;
    let mut w = csv::WriterBuilder::new().delimiter(opts.delimiter).from_writer(sink);
    w.write_record(schema.columns())?;
    let dm = opts.decimal_mark;
    for r in records {
        w.write_record([
            fmt_num(r.exposure, dm),
            r.coverage.label().to_string(),
            fmt_num(r.ageph, dm),
            r.sex.label().to_string(),
            r.bm.to_string(),
            fmt_num(r.power, dm),
            fmt_num(r.agec, dm),
            r.fuel.label().to_string(),
            r.usage.label().to_string(),
            u8::from(r.fleet).to_string(),
            r.postcode.clone(),
            fmt_num(r.lat, dm),
            fmt_num(r.long, dm),
            r.nclaims.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps the records with at most `max_claims` claims, in input order.
pub fn filter_max_claims(table: &PolicyTable, max_claims: u32) -> PolicyTable {
    PolicyTable {
        records: table
            .records
            .iter()
            .filter(|r| r.nclaims <= max_claims)
            .cloned()
            .collect(),
        rejected: table.rejected.clone(),
        rows_read: table.rows_read,
    }
}
