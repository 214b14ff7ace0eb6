//! Ground-level PM2.5 site records: CSV parsing, PM10-derived exclusion and
//! resolution of repeated yearly measurements into labelled sites.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const SITE_CSV_HEADER: [&str; 7] =
    ["site_id", "lat", "lon", "year", "pm25", "country", "derived_from_pm10"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: field `{field}` out of range")]
    OutOfRange { line: u64, field: &'static str },
    #[error("unexpected header: {0}")]
    BadHeader(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site_id: String,
    pub lat: f64,
    pub lon: f64,
    pub year: i32,
    pub pm25: f64,
    pub country: String,
    pub derived_from_pm10: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposurePolicy {
    /// Every yearly measurement becomes its own labelled sample.
    #[default]
    PerYear,
    /// One sample per location labelled with the mean over all years.
    AveragedPerLocation,
}

/// Calendar year of a label, or [`LabelYear::All`] for location averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelYear {
    Year(i32),
    All,
}

impl fmt::Display for LabelYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelYear::Year(y) => write!(f, "{y}"),
            LabelYear::All => f.write_str("all"),
        }
    }
}

impl Serialize for LabelYear {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LabelYear::Year(y) => s.serialize_i32(*y),
            LabelYear::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for LabelYear {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Year(i32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Year(y) => Ok(LabelYear::Year(y)),
            Raw::Text(t) if t == "all" => Ok(LabelYear::All),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad year `{t}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSite {
    pub site_id: String,
    pub lat: f64,
    pub lon: f64,
    pub label_pm25: f64,
    pub year: LabelYear,
    #[serde(default)]
    pub country: String,
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Parse the site CSV. The header must be exactly [`SITE_CSV_HEADER`].
pub fn parse_sites(input: impl Read) -> Result<Vec<SiteRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header != SITE_CSV_HEADER {
        return Err(IngestError::BadHeader(header.join(",")));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != SITE_CSV_HEADER.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 7 columns, found {}", row.len()),
            });
        }
        let malformed = |field: &str| IngestError::MalformedRow {
            line,
            reason: format!("cannot parse `{field}`"),
        };
        let num = |i: usize, field: &str| row[i].trim().parse::<f64>().map_err(|_| malformed(field));
        let lat = num(1, "lat")?;
        let lon = num(2, "lon")?;
        let year: i32 = row[3].trim().parse().map_err(|_| malformed("year"))?;
        let pm25 = num(4, "pm25")?;
        let derived = parse_bool(&row[6]).ok_or_else(|| malformed("derived_from_pm10"))?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(IngestError::OutOfRange { line, field: "lat" });
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(IngestError::OutOfRange { line, field: "lon" });
        }
        if !(1990..=2100).contains(&year) {
            return Err(IngestError::OutOfRange { line, field: "year" });
        }
        if !pm25.is_finite() || pm25 < 0.0 {
            return Err(IngestError::OutOfRange { line, field: "pm25" });
        }
        out.push(SiteRecord {
            site_id: row[0].trim().to_owned(),
            lat,
            lon,
            year,
            pm25,
            country: row[5].trim().to_owned(),
            derived_from_pm10: derived,
        });
    }
    log::debug!("parsed {} site records", out.len());
    Ok(out)
}

pub fn write_sites(records: &[SiteRecord], out: impl std::io::Write) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Drop records whose PM2.5 value was estimated from PM10 when `exclude_pm10_derived`.
pub fn filter_records(records: Vec<SiteRecord>, exclude_pm10_derived: bool) -> Vec<SiteRecord> {
    if !exclude_pm10_derived {
        return records;
    }
    records.into_iter().filter(|r| !r.derived_from_pm10).collect()
}

/// Location identity used for averaging: coordinates rounded to 6 decimals.
pub fn location_key(lat: f64, lon: f64) -> (i64, i64) {
    ((lat * 1e6).round() as i64, (lon * 1e6).round() as i64)
}

pub fn assign_exposures(records: &[SiteRecord], policy: ExposurePolicy) -> Vec<LabeledSite> {
    match policy {
        ExposurePolicy::PerYear => records
            .iter()
            .map(|r| LabeledSite {
                site_id: r.site_id.clone(),
                lat: r.lat,
                lon: r.lon,
                label_pm25: r.pm25,
                year: LabelYear::Year(r.year),
                country: r.country.clone(),
            })
            .collect(),
        ExposurePolicy::AveragedPerLocation => {
            // groups keep first-occurrence order
            let mut index: HashMap<(i64, i64), usize> = HashMap::new();
            let mut groups: Vec<(&SiteRecord, f64, usize)> = Vec::new();
            for r in records {
                let slot = *index.entry(location_key(r.lat, r.lon)).or_insert_with(|| {
                    groups.push((r, 0.0, 0));
                    groups.len() - 1
                });
                groups[slot].1 += r.pm25;
                groups[slot].2 += 1;
            }
            groups
                .into_iter()
                .map(|(first, sum, n)| LabeledSite {
                    site_id: first.site_id.clone(),
                    lat: first.lat,
                    lon: first.lon,
                    label_pm25: sum / n as f64,
                    year: if n == 1 { LabelYear::Year(first.year) } else { LabelYear::All },
                    country: first.country.clone(),
                })
                .collect()
        }
    }
}
