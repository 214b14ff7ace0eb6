//! Satellite tiles: request/URL shaping, PNG handling, a cached HTTP fetcher
//! and a deterministic synthetic generator.

mod fetch;
mod synthetic;

use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoError};

pub use fetch::{
    HttpResponse, RetryPolicy, TileFetcher, Transport, TransportError, UreqTransport,
    API_KEY_ENV,
};
pub use synthetic::{
    lognormal_from_moments, synthetic_sites, synthetic_tile, SyntheticLabels, TEXTURE_AMPLITUDE,
};

pub const DEFAULT_TILE_PIXELS: u32 = 256;
pub const MIN_ZOOM: u32 = 13;
pub const MAX_ZOOM: u32 = 16;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("an API key is required")]
    EmptyApiKey,
    #[error("invalid tile request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("HTTP status {0}")]
    HttpError(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("cannot decode PNG: {0}")]
    DecodeError(String),
    #[error("cannot write cache entry {path}: {source}")]
    CacheWriteError { path: String, source: std::io::Error },
    #[error("signal {signal} outside [0, {max}]")]
    SignalOutOfRange { signal: f64, max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileRequest {
    pub lat: f64,
    pub lon: f64,
    pub zoom: u32,
    pub size_px: u32,
}

impl TileRequest {
    /// A request restricted to zoom levels 13..=16.
    pub fn new(lat: f64, lon: f64, zoom: u32) -> Result<Self, TileError> {
        if !(MIN_ZOOM..=MAX_ZOOM).contains(&zoom) {
            return Err(TileError::InvalidRequest(format!(
                "zoom {zoom} outside {MIN_ZOOM}..={MAX_ZOOM}"
            )));
        }
        Self::with_any_zoom(lat, lon, zoom, DEFAULT_TILE_PIXELS)
    }

    /// Any zoom in 0..=22 and any positive size.
    pub fn with_any_zoom(lat: f64, lon: f64, zoom: u32, size_px: u32) -> Result<Self, TileError> {
        geo::check_coordinates(lat, lon)?;
        if zoom > 22 || size_px == 0 {
            return Err(TileError::InvalidRequest(format!("zoom {zoom}, size {size_px}")));
        }
        Ok(Self { lat, lon, zoom, size_px })
    }

    pub fn with_size(mut self, size_px: u32) -> Self {
        self.size_px = size_px;
        self
    }
}

/// 8-bit RGB, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl TileImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, TileError> {
        if data.len() != (width * height * 3) as usize {
            return Err(TileError::DecodeError(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn channel_mean(&self, channel: usize) -> f64 {
        let sum: u64 = self.data.iter().skip(channel).step_by(3).map(|&v| u64::from(v)).sum();
        sum as f64 / f64::from(self.width * self.height)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, TileError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| TileError::DecodeError(e.to_string()))?
            .to_rgb8();
        let (width, height) = img.dimensions();
        Ok(Self { width, height, data: img.into_raw() })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("length invariant holds");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
        out.into_inner()
    }

    /// Bilinear resize, used when stored tiles differ from a model's input size.
    pub fn resized(&self, size: u32) -> Self {
        if self.width == size && self.height == size {
            return self.clone();
        }
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("length invariant holds");
        let out = image::imageops::resize(&img, size, size, image::imageops::FilterType::Triangle);
        Self { width: size, height: size, data: out.into_raw() }
    }
}

/// Cache file name for a tile: `z{zoom}_lat{lat:.6}_lon{lon:.6}.png`.
pub fn cache_key(zoom: u32, lat: f64, lon: f64) -> String {
    format!("z{zoom}_lat{lat:.6}_lon{lon:.6}.png")
}

/// Static-map request URL. The key is form-encoded; it is never logged.
pub fn tile_url(base_url: &str, api_key: &str, req: &TileRequest) -> Result<String, TileError> {
    if api_key.is_empty() {
        return Err(TileError::EmptyApiKey);
    }
    let key: String = url::form_urlencoded::byte_serialize(api_key.as_bytes()).collect();
    Ok(format!(
        "{base_url}?center={:.6},{:.6}&zoom={}&size={s}x{s}&maptype=satellite&key={key}",
        req.lat,
        req.lon,
        req.zoom,
        s = req.size_px
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "https://maps.example.com/api/staticmap";

    #[test]
    fn url_shape() {
        let req = TileRequest::new(45.5, -73.6, 13).unwrap();
        assert_eq!(
            tile_url(BASE, "K", &req).unwrap(),
            format!("{BASE}?center=45.500000,-73.600000&zoom=13&size=256x256&maptype=satellite&key=K")
        );
        let z16 = TileRequest::new(45.5, -73.6, 16).unwrap();
        assert!(tile_url(BASE, "K", &z16).unwrap().contains("&zoom=16&"));
        assert!(matches!(tile_url(BASE, "", &req), Err(TileError::EmptyApiKey)));
    }

    #[test]
    fn url_encodes_key() {
        let req = TileRequest::new(1.0, 2.0, 14).unwrap();
        let url = tile_url(BASE, "a b&c=d", &req).unwrap();
        assert!(url.ends_with("key=a+b%26c%3Dd"), "{url}");
    }

    #[test]
    fn zoom_range_is_enforced_unless_overridden() {
        assert!(TileRequest::new(0.0, 0.0, 12).is_err());
        assert!(TileRequest::new(0.0, 0.0, 17).is_err());
        assert!(TileRequest::with_any_zoom(0.0, 0.0, 5, 64).is_ok());
        assert!(TileRequest::new(95.0, 0.0, 13).is_err());
    }

    #[test]
    fn cache_key_format() {
        assert_eq!(cache_key(13, 45.5, -73.6), "z13_lat45.500000_lon-73.600000.png");
    }

    #[test]
    fn png_round_trip() {
        let data: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let img = TileImage::new(4, 3, data).unwrap();
        assert_eq!(TileImage::decode_png(&img.encode_png()).unwrap(), img);
        assert!(TileImage::decode_png(b"not a png").is_err());
        assert!(TileImage::new(2, 2, vec![0; 5]).is_err());
    }
}
