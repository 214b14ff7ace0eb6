//! Geohash-disjoint splits, decile class boundaries and the JSONL manifest
//! that binds images to labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoError, GeohashCode};
use crate::ingest::{LabelYear, LabeledSite};
use crate::tiles::cache_key;

pub const SPLIT_PRECISION: usize = 3;
pub const DEFAULT_RATIOS: SplitRatios = SplitRatios { train: 0.8, validation: 0.1, test: 0.1 };

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no samples to split")]
    EmptyInput,
    #[error("invalid split ratios {0:?}")]
    InvalidRatios(SplitRatios),
    #[error("need at least 10 values for deciles, got {0}")]
    TooFewValues(usize),
    #[error("geohash {0} has no split assignment")]
    MissingGeohash(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("manifest line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn validate(self) -> Result<Self, DatasetError> {
        let parts = [self.train, self.validation, self.test];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|&r| !(r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatios(self));
        }
        Ok(self)
    }

    /// Group counts for `n` geohashes: validation and test get round(n·ratio),
    /// train takes the remainder.
    pub fn group_counts(self, n: usize) -> [usize; 3] {
        let val = ((n as f64) * self.validation).round() as usize;
        let test = ((n as f64) * self.test).round() as usize;
        let (val, test) = (val.min(n), test.min(n - val.min(n)));
        [n - val - test, val, test]
    }
}

/// Split membership of every precision-3 geohash seen in the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub groups: BTreeMap<GeohashCode, Split>,
}

impl SplitAssignment {
    pub fn get(&self, code: &GeohashCode) -> Option<Split> {
        self.groups.get(code).copied()
    }

    pub fn codes_in(&self, split: Split) -> BTreeSet<&GeohashCode> {
        self.groups.iter().filter(|(_, &s)| s == split).map(|(c, _)| c).collect()
    }
}

/// Shuffle the distinct geohashes (sorted first, then a SplitMix64-seeded
/// Fisher-Yates shuffle) and cut the sequence into train, validation, test.
pub fn split_by_geohash(
    samples: &[LabeledSite],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let ratios = ratios.validate()?;
    if samples.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut codes = samples
        .iter()
        .map(|s| geo::geohash_encode(s.lat, s.lon, SPLIT_PRECISION))
        .collect::<Result<BTreeSet<_>, _>>()?
        .into_iter()
        .collect::<Vec<_>>();
    let mut rng = SplitMix64::seed_from_u64(seed);
    codes.shuffle(&mut rng);
    let [n_train, n_val, _] = ratios.group_counts(codes.len());
    let groups = codes
        .into_iter()
        .enumerate()
        .map(|(i, code)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (code, split)
        })
        .collect();
    Ok(SplitAssignment { seed, ratios, groups })
}

/// The nine interior decile boundaries D1..D9.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileEdges(pub [f64; 9]);

/// Quantile by linear interpolation between order statistics of sorted data:
/// h = (n − 1)p + 1 (1-based), q = x⌊h⌋ + (h − ⌊h⌋)(x⌊h⌋+1 − x⌊h⌋).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p + 1.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let below = sorted[lo - 1];
    if lo >= n {
        return below;
    }
    below + frac * (sorted[lo] - below)
}

pub fn decile_edges(labels: &[f64]) -> Result<DecileEdges, DatasetError> {
    if labels.len() < 10 {
        return Err(DatasetError::TooFewValues(labels.len()));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges = [0.0; 9];
    for (i, e) in edges.iter_mut().enumerate() {
        *e = quantile_sorted(&sorted, (i + 1) as f64 / 10.0);
    }
    Ok(DecileEdges(edges))
}

/// Class 1..=10 with right-closed intervals; values past D9 fall into 10.
pub fn decile_class(value: f64, edges: &DecileEdges) -> u8 {
    edges.0.iter().position(|&e| value <= e).map_or(10, |k| k as u8 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub site_id: String,
    pub lat: f64,
    pub lon: f64,
    pub geohash3: GeohashCode,
    pub zoom: u32,
    pub image_path: String,
    pub year: LabelYear,
    pub pm25: f64,
    pub decile_class: Option<u8>,
    pub split: Split,
}

pub fn build_manifest(
    sites: &[LabeledSite],
    assignment: &SplitAssignment,
    edges: Option<&DecileEdges>,
    zoom: u32,
    image_dir: &Path,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut entries = sites
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let code = geo::geohash_encode(s.lat, s.lon, SPLIT_PRECISION)?;
            let split = assignment
                .get(&code)
                .ok_or_else(|| DatasetError::MissingGeohash(code.to_string()))?;
            Ok(ManifestEntry {
                sample_id: format!("{i:07}-{}-z{zoom}", s.site_id),
                site_id: s.site_id.clone(),
                lat: s.lat,
                lon: s.lon,
                geohash3: code,
                zoom,
                image_path: image_dir.join(cache_key(zoom, s.lat, s.lon)).to_string_lossy().into(),
                year: s.year,
                pm25: s.label_pm25,
                decile_class: edges.map(|e| decile_class(s.label_pm25, e)),
                split,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(entries)
}

/// Split, compute decile edges on the training labels and build the manifest.
pub fn prepare(
    sites: &[LabeledSite],
    ratios: SplitRatios,
    seed: u64,
    zoom: u32,
    image_dir: &Path,
) -> Result<(Vec<ManifestEntry>, SplitAssignment, Option<DecileEdges>), DatasetError> {
    let assignment = split_by_geohash(sites, ratios, seed)?;
    let train_labels: Vec<f64> = sites
        .iter()
        .filter(|s| {
            geo::geohash_encode(s.lat, s.lon, SPLIT_PRECISION)
                .map(|c| assignment.get(&c) == Some(Split::Train))
                .unwrap_or(false)
        })
        .map(|s| s.label_pm25)
        .collect();
    let edges = decile_edges(&train_labels).ok();
    let manifest = build_manifest(sites, &assignment, edges.as_ref(), zoom, image_dir)?;
    Ok((manifest, assignment, edges))
}

pub fn in_split(entries: &[ManifestEntry], split: Split) -> Vec<&ManifestEntry> {
    entries.iter().filter(|e| e.split == split).collect()
}

pub fn write_manifest(entries: &[ManifestEntry], mut out: impl Write) -> Result<(), DatasetError> {
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest(input: impl BufRead) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line)
                .map_err(|source| DatasetError::Manifest { line: i + 1, source })?,
        );
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn site(id: &str, lat: f64, lon: f64, label: f64) -> LabeledSite {
        LabeledSite {
            site_id: id.into(),
            lat,
            lon,
            label_pm25: label,
            year: LabelYear::Year(2015),
            country: String::new(),
        }
    }

    const GLOBAL_DECILE_EDGES: [f64; 9] = [7.00, 8.49, 9.79, 11.51, 14.03, 17.64, 24.05, 35.78, 54.81];

    #[test]
    fn ten_geohashes_split_8_1_1() {
        // ten points in ten distinct precision-3 cells
        let sites: Vec<_> =
            (0..10).map(|i| site(&format!("s{i}"), -40.0 + 8.0 * i as f64, 5.0 * i as f64, 1.0)).collect();
        let a = split_by_geohash(&sites, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!(a.groups.len(), 10);
        let counts: Vec<usize> = Split::ALL.iter().map(|&s| a.codes_in(s).len()).collect();
        assert_eq!(counts, vec![8, 1, 1]);
    }

    #[test]
    fn shared_geohash_lands_in_one_split() {
        let sites: Vec<_> = (0..5).map(|i| site(&format!("s{i}"), 45.0, 10.0 + 0.01 * i as f64, 1.0)).collect();
        let a = split_by_geohash(&sites, DEFAULT_RATIOS, 9).unwrap();
        assert_eq!(a.groups.len(), 1);
        assert_eq!(*a.groups.values().next().unwrap(), Split::Train);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let sites: Vec<_> =
            (0..200).map(|i| site(&format!("s{i}"), -60.0 + 0.6 * i as f64, -170.0 + 1.7 * i as f64, 1.0)).collect();
        let a = split_by_geohash(&sites, DEFAULT_RATIOS, 5).unwrap();
        let b = split_by_geohash(&sites, DEFAULT_RATIOS, 5).unwrap();
        let c = split_by_geohash(&sites, DEFAULT_RATIOS, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.groups, c.groups);
    }

    #[test]
    fn split_guards() {
        assert!(matches!(split_by_geohash(&[], DEFAULT_RATIOS, 0), Err(DatasetError::EmptyInput)));
        let bad = SplitRatios { train: 0.8, validation: 0.1, test: 0.2 };
        assert!(matches!(
            split_by_geohash(&[site("a", 0.0, 0.0, 1.0)], bad, 0),
            Err(DatasetError::InvalidRatios(_))
        ));
    }

    #[test]
    fn deciles_of_one_to_ten() {
        let labels: Vec<f64> = (1..=10).map(f64::from).collect();
        let e = decile_edges(&labels).unwrap();
        let expected = [1.9, 2.8, 3.7, 4.6, 5.5, 6.4, 7.3, 8.2, 9.1];
        for (a, b) in e.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(decile_edges(&[5.0; 10]).unwrap().0, [5.0; 9]);
        assert!(matches!(decile_edges(&[1.0; 9]), Err(DatasetError::TooFewValues(9))));
    }

    #[test]
    fn decile_class_against_published_edges() {
        let edges = DecileEdges(GLOBAL_DECILE_EDGES);
        assert_eq!(decile_class(15.0, &edges), 6);
        assert_eq!(decile_class(0.50, &edges), 1);
        assert_eq!(decile_class(436.44, &edges), 10);
        // right-closed: a boundary value belongs to the lower class
        assert_eq!(decile_class(7.00, &edges), 1);
        assert_eq!(decile_class(7.0001, &edges), 2);
    }

    #[test]
    fn manifest_entries_follow_sites() {
        let sites = vec![
            site("a", 45.0, 10.0, 10.0),
            site("b", 10.0, 100.0, 20.0),
            site("c", -30.0, -60.0, 30.0),
        ];
        let a = split_by_geohash(&sites, DEFAULT_RATIOS, 3).unwrap();
        let m = build_manifest(&sites, &a, None, 13, Path::new("tiles")).unwrap();
        assert_eq!(m.len(), 3);
        for (e, s) in m.iter().zip(&sites) {
            assert_eq!(e.geohash3, geo::geohash_encode(s.lat, s.lon, 3).unwrap());
            assert_eq!(Some(e.split), a.get(&e.geohash3));
            assert_eq!(e.decile_class, None);
        }
    }

    #[test]
    fn manifest_requires_assignment() {
        let sites = vec![site("a", 45.0, 10.0, 10.0)];
        let a = split_by_geohash(&sites, DEFAULT_RATIOS, 3).unwrap();
        let other = vec![site("z", -45.0, -10.0, 1.0)];
        assert!(matches!(
            build_manifest(&other, &a, None, 13, Path::new(".")),
            Err(DatasetError::MissingGeohash(_))
        ));
    }

    #[test]
    fn per_year_duplicates_share_the_image() {
        let mut a = site("a", 45.0, 10.0, 10.0);
        let mut b = a.clone();
        a.year = LabelYear::Year(2014);
        b.year = LabelYear::Year(2015);
        b.label_pm25 = 20.0;
        let sites = vec![a, b];
        let asg = split_by_geohash(&sites, DEFAULT_RATIOS, 3).unwrap();
        let m = build_manifest(&sites, &asg, None, 14, Path::new("img")).unwrap();
        assert_eq!(m[0].image_path, m[1].image_path);
        assert_ne!(m[0].pm25, m[1].pm25);
        assert_ne!(m[0].year, m[1].year);
        assert_ne!(m[0].sample_id, m[1].sample_id);
    }
}
