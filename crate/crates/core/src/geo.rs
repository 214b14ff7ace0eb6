//! Geohash encoding, Web-Mercator ground resolution and regular lat/lon grids.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GEOHASH_ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";
pub const MAX_GEOHASH_PRECISION: usize = 12;

/// Metres per pixel at zoom 0 on the equator for 256-pixel tiles.
pub const ZOOM0_METERS_PER_PIXEL: f64 = 156_543.033_92;
/// WGS-84 equatorial circumference in metres.
pub const EARTH_CIRCUMFERENCE_M: f64 = 40_075_016.686;
pub const MERCATOR_MAX_LAT: f64 = 85.051_13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("geohash precision {0} outside 1..=12")]
    PrecisionOutOfRange(usize),
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },
    #[error("latitude {0} outside the Web-Mercator range")]
    LatitudeOutsideMercator(f64),
    #[error("empty extent: {0}")]
    EmptyExtent(String),
}

/// A lowercase base-32 geohash.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeohashCode(String);

impl GeohashCode {
    /// Wrap an existing code after validating its alphabet and length.
    pub fn parse(code: &str) -> Option<Self> {
        let ok = (1..=MAX_GEOHASH_PRECISION).contains(&code.len())
            && code.bytes().all(|b| GEOHASH_ALPHABET.contains(&b));
        ok.then(|| Self(code.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn precision(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for GeohashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn check_coordinates(lat: f64, lon: f64) -> Result<(), GeoError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(GeoError::CoordinateOutOfRange { lat, lon });
    }
    Ok(())
}

/// Standard geohash: bits alternate longitude/latitude starting with
/// longitude, each bit halving the current interval (upper half = 1).
pub fn geohash_encode(lat: f64, lon: f64, precision: usize) -> Result<GeohashCode, GeoError> {
    if !(1..=MAX_GEOHASH_PRECISION).contains(&precision) {
        return Err(GeoError::PrecisionOutOfRange(precision));
    }
    check_coordinates(lat, lon)?;
    let (mut lat_lo, mut lat_hi) = (-90.0, 90.0);
    let (mut lon_lo, mut lon_hi) = (-180.0, 180.0);
    let mut code = String::with_capacity(precision);
    let mut even = true;
    for _ in 0..precision {
        let mut idx = 0usize;
        for _ in 0..5 {
            let (value, lo, hi) = if even {
                (lon, &mut lon_lo, &mut lon_hi)
            } else {
                (lat, &mut lat_lo, &mut lat_hi)
            };
            let mid = (*lo + *hi) / 2.0;
            idx <<= 1;
            if value >= mid {
                idx |= 1;
                *lo = mid;
            } else {
                *hi = mid;
            }
            even = !even;
        }
        code.push(GEOHASH_ALPHABET[idx] as char);
    }
    Ok(GeohashCode(code))
}

/// Ground metres per pixel of a Web-Mercator tile at `zoom` and `lat`.
pub fn ground_resolution(zoom: u32, lat: f64) -> Result<f64, GeoError> {
    if !lat.is_finite() || lat.abs() >= MERCATOR_MAX_LAT {
        return Err(GeoError::LatitudeOutsideMercator(lat));
    }
    Ok(ZOOM0_METERS_PER_PIXEL * (lat * PI / 180.0).cos() / 2f64.powi(zoom as i32))
}

/// Ground width in metres covered by a square image of `pixels` pixels.
pub fn tile_coverage_m(zoom: u32, lat: f64, pixels: u32) -> Result<f64, GeoError> {
    Ok(ground_resolution(zoom, lat)? * f64::from(pixels))
}

/// Smallest ground distance (metres) between neighbouring lattice points of
/// spacing `resolution` degrees at latitude `lat` (the east-west spacing on a sphere).
pub fn grid_spacing_m(resolution: f64, lat: f64) -> f64 {
    let per_degree = EARTH_CIRCUMFERENCE_M / 360.0;
    let ns = resolution * per_degree;
    let ew = ns * (lat * PI / 180.0).cos();
    ns.min(ew)
}

/// Inclusive row-major (latitude outer) lattice anchored at the extent minimum.
pub fn grid_points(
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
    resolution: f64,
) -> Result<Vec<(f64, f64)>, GeoError> {
    if !(lat_min <= lat_max) || !(lon_min <= lon_max) {
        return Err(GeoError::EmptyExtent(format!(
            "lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]"
        )));
    }
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(GeoError::EmptyExtent(format!("resolution {resolution}")));
    }
    // tolerate representation error so that e.g. 0.3 / 0.15 yields 3 steps
    let steps = |span: f64| ((span / resolution) + 1e-9).floor() as usize + 1;
    let (n_lat, n_lon) = (steps(lat_max - lat_min), steps(lon_max - lon_min));
    let mut points = Vec::with_capacity(n_lat * n_lon);
    for i in 0..n_lat {
        let lat = lat_min + i as f64 * resolution;
        for j in 0..n_lon {
            points.push((lat, lon_min + j as f64 * resolution));
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_geohashes() {
        assert_eq!(geohash_encode(57.64911, 10.40744, 11).unwrap().as_str(), "u4pruydqqvj");
        assert_eq!(geohash_encode(57.64911, 10.40744, 3).unwrap().as_str(), "u4p");
        assert_eq!(geohash_encode(0.0, 0.0, 3).unwrap().as_str(), "s00");
    }

    #[test]
    fn geohash_guards() {
        assert_eq!(geohash_encode(0.0, 0.0, 0), Err(GeoError::PrecisionOutOfRange(0)));
        assert_eq!(geohash_encode(0.0, 0.0, 13), Err(GeoError::PrecisionOutOfRange(13)));
        assert!(matches!(
            geohash_encode(91.0, 0.0, 3),
            Err(GeoError::CoordinateOutOfRange { .. })
        ));
        assert!(geohash_encode(90.0, 180.0, 12).is_ok());
    }

    #[test]
    fn resolution_examples() {
        let r13 = ground_resolution(13, 0.0).unwrap();
        assert!((r13 - 19.109_257_07).abs() < 1e-6, "{r13}");
        assert!((r13 * 256.0 - 4891.97).abs() < 0.01);
        assert_eq!(ground_resolution(0, 0.0).unwrap(), ZOOM0_METERS_PER_PIXEL);
        let r16 = ground_resolution(16, 60.0).unwrap();
        assert!((r16 - 156_543.033_92 * 0.5 / 65_536.0).abs() < 1e-9);
        assert!((r16 - 1.1943).abs() < 1e-4);
        assert!(ground_resolution(13, 86.0).is_err());
    }

    #[test]
    fn resolution_halves_per_zoom() {
        for z in 0..22 {
            let a = ground_resolution(z, 37.5).unwrap();
            let b = ground_resolution(z + 1, 37.5).unwrap();
            assert_eq!(a / 2.0, b);
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid_points(40.0, 40.3, -100.0, -99.7, 0.15).unwrap().len(), 9);
        assert_eq!(grid_points(40.0, 40.0, -100.0, -100.0, 0.15).unwrap(), vec![(40.0, -100.0)]);
        assert_eq!(grid_points(40.0, 40.1, -100.0, -99.9, 0.05).unwrap().len(), 9);
        let pts = grid_points(0.0, 0.1, 0.0, 0.1, 0.1).unwrap();
        // latitude is the outer loop
        assert_eq!(pts[1], (0.0, 0.1));
        assert!(matches!(grid_points(1.0, 0.0, 0.0, 1.0, 0.1), Err(GeoError::EmptyExtent(_))));
    }

    #[test]
    fn grid_resolutions_keep_tiles_apart() {
        // 0.15°/z13, 0.10°/z14 and 0.05°/z15 at a mid-continental latitude
        for (res, zoom) in [(0.15, 13), (0.10, 14), (0.05, 15)] {
            for lat in [25.0, 45.0, 60.0] {
                let spacing = grid_spacing_m(res, lat);
                let coverage = tile_coverage_m(zoom, lat, 256).unwrap();
                assert!(spacing > coverage, "res {res} zoom {zoom} lat {lat}");
            }
        }
    }
}
