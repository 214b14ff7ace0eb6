use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::metrics::{ols_fit, r_squared, FitLine};
use super::EvalError;
use crate::geo::{geohash_encode, GeohashCode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteInfo {
    pub lat: f64,
    pub lon: f64,
    pub country: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteDifference {
    pub lat: f64,
    pub lon: f64,
    pub geohash3: GeohashCode,
    pub country: String,
    pub model_a_pred: f64,
    pub model_b_pred: f64,
    /// `model_a_pred − model_b_pred`.
    pub difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub key: String,
    pub n: usize,
    pub mean_difference: f64,
    pub min_difference: f64,
    pub max_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Model A regressed on model B; absent when B has fewer than three
    /// distinct inputs.
    pub fit: Option<FitLine>,
    pub r2_cod: Option<f64>,
    pub r2_corr: Option<f64>,
    pub differences: Vec<SiteDifference>,
    pub by_country: Vec<GroupStats>,
    pub by_geohash3: Vec<GroupStats>,
}

/// Grouped stats, largest absolute mean difference first.
fn aggregate<'a>(diffs: impl Iterator<Item = (&'a str, f64)>) -> Vec<GroupStats> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (k, d) in diffs {
        groups.entry(k).or_default().push(d);
    }
    let mut out: Vec<GroupStats> = groups
        .into_iter()
        .map(|(key, v)| GroupStats {
            key: key.to_string(),
            n: v.len(),
            mean_difference: v.iter().sum::<f64>() / v.len() as f64,
            min_difference: v.iter().copied().fold(f64::INFINITY, f64::min),
            max_difference: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    out.sort_by(|a, b| b.mean_difference.abs().total_cmp(&a.mean_difference.abs()).then(a.key.cmp(&b.key)));
    out
}

pub fn compare_models(preds_a: &[f64], preds_b: &[f64], sites: &[SiteInfo]) -> Result<ComparisonReport, EvalError> {
    if preds_a.len() != preds_b.len() {
        return Err(EvalError::LengthMismatch { left: preds_a.len(), right: preds_b.len() });
    }
    if sites.len() != preds_a.len() {
        return Err(EvalError::LengthMismatch { left: preds_a.len(), right: sites.len() });
    }
    let differences = sites
        .iter()
        .zip(preds_a.iter().zip(preds_b))
        .map(|(s, (&a, &b))| {
            Ok(SiteDifference {
                lat: s.lat,
                lon: s.lon,
                geohash3: geohash_encode(s.lat, s.lon, 3)?,
                country: s.country.clone(),
                model_a_pred: a,
                model_b_pred: b,
                difference: a - b,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let r2 = r_squared(preds_a, preds_b).ok();
    Ok(ComparisonReport {
        fit: ols_fit(preds_b, preds_a).ok(),
        r2_cod: r2.map(|r| r.0),
        r2_corr: r2.map(|r| r.1),
        by_country: aggregate(differences.iter().map(|d| (d.country.as_str(), d.difference))),
        by_geohash3: aggregate(differences.iter().map(|d| (d.geohash3.as_str(), d.difference))),
        differences,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    GeoJson,
}

pub fn export_differences(report: &ComparisonReport, format: ExportFormat) -> Result<Vec<u8>, EvalError> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if report.differences.is_empty() {
                w.write_record(DIFF_COLUMNS)?;
            }
            for d in &report.differences {
                w.serialize(d)?;
            }
            w.into_inner().map_err(|e| EvalError::Io(e.into_error()))
        }
        ExportFormat::GeoJson => {
            let features: Vec<Value> = report
                .differences
                .iter()
                .map(|d| {
                    json!({
                        "type": "Feature",
                        "geometry": { "type": "Point", "coordinates": [d.lon, d.lat] },
                        "properties": {
                            "geohash3": d.geohash3,
                            "country": d.country,
                            "model_a_pred": d.model_a_pred,
                            "model_b_pred": d.model_b_pred,
                            "difference": d.difference,
                        }
                    })
                })
                .collect();
            let doc = json!({ "type": "FeatureCollection", "features": features });
            Ok(serde_json::to_vec_pretty(&doc)?)
        }
    }
}

const DIFF_COLUMNS: [&str; 7] =
    ["lat", "lon", "geohash3", "country", "model_a_pred", "model_b_pred", "difference"];

pub fn parse_differences_csv(bytes: &[u8]) -> Result<Vec<SiteDifference>, EvalError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<&str> = r.headers()?.iter().collect();
    if header != DIFF_COLUMNS {
        return Err(EvalError::Parse(format!("unexpected columns {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Parse a FeatureCollection of Point features, checking its shape.
pub fn parse_differences_geojson(bytes: &[u8]) -> Result<Vec<SiteDifference>, EvalError> {
    let doc: Value = serde_json::from_slice(bytes)?;
    let bad = |m: &str| EvalError::Parse(m.to_string());
    if doc["type"] != "FeatureCollection" {
        return Err(bad("not a FeatureCollection"));
    }
    let features = doc["features"].as_array().ok_or_else(|| bad("features is not an array"))?;
    features
        .iter()
        .map(|f| {
            if f["type"] != "Feature" || f["geometry"]["type"] != "Point" {
                return Err(bad("feature is not a Point Feature"));
            }
            let c = f["geometry"]["coordinates"].as_array().ok_or_else(|| bad("coordinates"))?;
            let (lon, lat) = match c.as_slice() {
                [lon, lat] => (lon.as_f64(), lat.as_f64()),
                _ => return Err(bad("coordinates must be [lon, lat]")),
            };
            let p = &f["properties"];
            let num = |k: &str| p[k].as_f64().ok_or_else(|| bad(k));
            let text = |k: &str| p[k].as_str().map(str::to_string).ok_or_else(|| bad(k));
            Ok(SiteDifference {
                lat: lat.ok_or_else(|| bad("lat"))?,
                lon: lon.ok_or_else(|| bad("lon"))?,
                geohash3: GeohashCode::parse(&text("geohash3")?).ok_or_else(|| bad("geohash3"))?,
                country: text("country")?,
                model_a_pred: num("model_a_pred")?,
                model_b_pred: num("model_b_pred")?,
                difference: num("difference")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sites() -> Vec<SiteInfo> {
        vec![
            SiteInfo { lat: 45.5, lon: -73.6, country: "CA".into() },
            SiteInfo { lat: 28.6, lon: 77.2, country: "IN".into() },
            SiteInfo { lat: 28.7, lon: 77.1, country: "IN".into() },
            SiteInfo { lat: -33.9, lon: 18.4, country: "ZA".into() },
        ]
    }

    #[test]
    fn self_comparison() {
        let p = [10.0, 80.0, 95.0, 20.0];
        let r = compare_models(&p, &p, &sites()).unwrap();
        let fit = r.fit.unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert_eq!((r.r2_cod, r.r2_corr), (Some(1.0), Some(1.0)));
        assert!(r.differences.iter().all(|d| d.difference == 0.0));
    }

    #[test]
    fn constant_offset() {
        let b = [10.0, 80.0, 95.0, 20.0];
        let a: Vec<f64> = b.iter().map(|v| v + 5.0).collect();
        let r = compare_models(&a, &b, &sites()).unwrap();
        let fit = r.fit.unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12 && (fit.intercept - 5.0).abs() < 1e-9);
        assert!(r.differences.iter().all(|d| d.difference == 5.0));
        assert_eq!(r.by_country.len(), 3);
        assert_eq!(r.by_country.iter().find(|g| g.key == "IN").unwrap().n, 2);
    }

    #[test]
    fn groups_sorted_by_absolute_mean() {
        let a = [1.0, 30.0, 30.0, -9.0];
        let b = [0.0, 0.0, 0.0, 0.0];
        let r = compare_models(&a, &b, &sites()).unwrap();
        let keys: Vec<&str> = r.by_country.iter().map(|g| g.key.as_str()).collect();
        assert_eq!(keys, vec!["IN", "ZA", "CA"]);
        assert!(matches!(compare_models(&a, &b[..3], &sites()), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn exports_round_trip() {
        let a = [12.5, 80.25, 95.0, 20.0];
        let b = [10.0, 81.0, 90.0, 25.0];
        let r = compare_models(&a, &b, &sites()).unwrap();
        let csv = export_differences(&r, ExportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 5);
        assert_eq!(parse_differences_csv(&csv).unwrap(), r.differences);
        let gj = export_differences(&r, ExportFormat::GeoJson).unwrap();
        assert_eq!(parse_differences_geojson(&gj).unwrap(), r.differences);
        let doc: Value = serde_json::from_slice(&gj).unwrap();
        assert_eq!(doc["features"][0]["geometry"]["coordinates"], json!([-73.6, 45.5]));
    }

    #[test]
    fn empty_exports() {
        let r = compare_models(&[], &[], &[]).unwrap();
        let gj = export_differences(&r, ExportFormat::GeoJson).unwrap();
        let doc: Value = serde_json::from_slice(&gj).unwrap();
        assert_eq!(doc, json!({ "type": "FeatureCollection", "features": [] }));
        let csv = export_differences(&r, ExportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 1);
        assert!(parse_differences_csv(&csv).unwrap().is_empty());
    }
}
