//! Deterministic synthetic tiles. Texture is value noise driven by a 64-bit
//! mixing hash of (seed, location, zoom, channel, lattice node), so the same
//! inputs give the same bytes on every platform. When a signal is given the
//! red channel mean is pinned to `32 + 191 · signal / signal_max`.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{TileError, TileImage, TileRequest};
use crate::ingest::SiteRecord;

/// Peak deviation of the red texture around its mean. Kept below the
/// minimum red mean (32) so no pixel is ever clipped.
pub const TEXTURE_AMPLITUDE: f64 = 24.0;
const RED_FLOOR: f64 = 32.0;
const RED_SPAN: f64 = 191.0;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_parts(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3, |h, &p| mix64(h ^ p))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Zero-mean value-noise field of `size × size` samples in roughly [-1, 1].
fn value_noise(key: u64, channel: u64, size: usize, cells: usize) -> Vec<f64> {
    let nodes = cells + 1;
    let lattice: Vec<f64> = (0..nodes * nodes)
        .map(|i| 2.0 * unit(hash_parts(&[key, channel, i as u64])) - 1.0)
        .collect();
    let scale = cells as f64 / size as f64;
    let mut field = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = (y as f64 + 0.5) * scale;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..size {
            let fx = (x as f64 + 0.5) * scale;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * nodes + xx];
            let top = at(iy, ix) + tx * (at(iy, ix + 1) - at(iy, ix));
            let bottom = at(iy + 1, ix) + tx * (at(iy + 1, ix + 1) - at(iy + 1, ix));
            field.push(top + ty * (bottom - top));
        }
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    field.iter_mut().for_each(|v| *v -= mean);
    field
}

/// Round `values` to bytes so their sum equals round(target · n).
fn quantize_to_mean(values: &[f64], target: f64) -> Vec<u8> {
    let mut bytes: Vec<u8> = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let want = (target * values.len() as f64).round() as i64;
    let have: i64 = bytes.iter().map(|&b| i64::from(b)).sum();
    let mut diff = want - have;
    let step: i8 = if diff > 0 { 1 } else { -1 };
    // nudge sample values whose rounding went the other way first
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = (values[a] - f64::from(bytes[a])) * f64::from(step);
        let rb = (values[b] - f64::from(bytes[b])) * f64::from(step);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(values.len() * 4) {
        if diff == 0 {
            break;
        }
        let b = i16::from(bytes[i]) + i16::from(step);
        if (0..=255).contains(&b) {
            bytes[i] = b as u8;
            diff -= i64::from(step);
        }
    }
    bytes
}

pub fn synthetic_tile(
    seed: u64,
    req: &TileRequest,
    signal: Option<f64>,
    signal_max: f64,
) -> Result<TileImage, TileError> {
    if let Some(s) = signal {
        if !(signal_max > 0.0) || !(0.0..=signal_max).contains(&s) {
            return Err(TileError::SignalOutOfRange { signal: s, max: signal_max });
        }
    }
    let size = req.size_px as usize;
    let lat_q = (req.lat * 1e6).round() as i64 as u64;
    let lon_q = (req.lon * 1e6).round() as i64 as u64;
    let key = hash_parts(&[seed, lat_q, lon_q, u64::from(req.zoom)]);
    let cells = 4 + 2 * (req.zoom as usize % 4);

    let red_mean = match signal {
        Some(s) => RED_FLOOR + RED_SPAN * (s / signal_max),
        None => RED_FLOOR + RED_SPAN * unit(hash_parts(&[key, 0xA11CE])),
    };
    let red_tex = value_noise(key, 0, size, cells);
    let red: Vec<f64> = red_tex.iter().map(|t| red_mean + TEXTURE_AMPLITUDE * t).collect();
    let red = quantize_to_mean(&red, red_mean);

    let mut other = Vec::with_capacity(2);
    for ch in 1..3u64 {
        let base = 70.0 + 100.0 * unit(hash_parts(&[key, 0xBA5E, ch]));
        let tex = value_noise(key, ch, size, cells + ch as usize);
        other.push(
            tex.iter()
                .map(|t| (base + 40.0 * t).round().clamp(0.0, 255.0) as u8)
                .collect::<Vec<u8>>(),
        );
    }

    let mut data = Vec::with_capacity(size * size * 3);
    for i in 0..size * size {
        data.extend_from_slice(&[red[i], other[0][i], other[1][i]]);
    }
    TileImage::new(req.size_px, req.size_px, data)
}

/// Log-normal label distribution clipped to `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticLabels {
    pub mu: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

/// (mu, sigma) of the log-normal with the given arithmetic mean and SD.
pub fn lognormal_from_moments(mean: f64, sd: f64) -> (f64, f64) {
    let sigma2 = (1.0 + (sd / mean).powi(2)).ln();
    (mean.ln() - sigma2 / 2.0, sigma2.sqrt())
}

impl SyntheticLabels {
    /// Global PM2.5 spread: mean 23.24, SD 22.94, range 0.50..436.44 µg/m³.
    pub fn global() -> Self {
        let (mu, sigma) = lognormal_from_moments(23.24, 22.94);
        Self { mu, sigma, min: 0.50, max: 436.44 }
    }
}

/// `count` single-year synthetic sites with random coordinates and labels.
pub fn synthetic_sites(count: usize, seed: u64, labels: &SyntheticLabels) -> Vec<SiteRecord> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let dist = LogNormal::new(labels.mu, labels.sigma).expect("valid log-normal parameters");
    (0..count)
        .map(|i| {
            // 6-decimal coordinates so the tile cache key is exact
            let lat = (rng.random_range(-55.0..70.0f64) * 1e6).round() / 1e6;
            let lon = (rng.random_range(-180.0..180.0f64) * 1e6).round() / 1e6;
            let pm25 = dist.sample(&mut rng).clamp(labels.min, labels.max);
            SiteRecord {
                site_id: format!("syn{i:05}"),
                lat,
                lon,
                year: 2015,
                pm25: (pm25 * 100.0).round() / 100.0,
                country: String::new(),
                derived_from_pm10: false,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> TileRequest {
        TileRequest::with_any_zoom(45.5, -73.6, 13, 64).unwrap()
    }

    #[test]
    fn deterministic() {
        let a = synthetic_tile(7, &req(), Some(10.0), 100.0).unwrap();
        let b = synthetic_tile(7, &req(), Some(10.0), 100.0).unwrap();
        assert_eq!(a, b);
        let c = synthetic_tile(8, &req(), Some(10.0), 100.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn red_mean_tracks_signal() {
        let lo = synthetic_tile(1, &req(), Some(0.0), 436.44).unwrap();
        assert!((lo.channel_mean(0) - 32.0).abs() <= 1.0, "{}", lo.channel_mean(0));
        let hi = synthetic_tile(1, &req(), Some(436.44), 436.44).unwrap();
        assert!((hi.channel_mean(0) - 223.0).abs() <= 1.0, "{}", hi.channel_mean(0));
    }

    #[test]
    fn texture_depends_on_location_and_zoom() {
        let base = synthetic_tile(1, &req(), Some(5.0), 10.0).unwrap();
        let moved = TileRequest::with_any_zoom(45.6, -73.6, 13, 64).unwrap();
        let zoomed = TileRequest::with_any_zoom(45.5, -73.6, 14, 64).unwrap();
        assert_ne!(base, synthetic_tile(1, &moved, Some(5.0), 10.0).unwrap());
        assert_ne!(base, synthetic_tile(1, &zoomed, Some(5.0), 10.0).unwrap());
        // red variation actually present
        let reds: Vec<u8> = base.data.iter().step_by(3).copied().collect();
        let (min, max) = (reds.iter().min().unwrap(), reds.iter().max().unwrap());
        assert!(max - min > 10);
    }

    #[test]
    fn signal_guard() {
        assert!(matches!(
            synthetic_tile(1, &req(), Some(11.0), 10.0),
            Err(TileError::SignalOutOfRange { .. })
        ));
        assert!(synthetic_tile(1, &req(), None, 10.0).is_ok());
    }

    #[test]
    fn lognormal_moments_round_trip() {
        let (mu, sigma) = lognormal_from_moments(23.24, 22.94);
        let mean = (mu + sigma * sigma / 2.0).exp();
        let var = ((sigma * sigma).exp() - 1.0) * (2.0 * mu + sigma * sigma).exp();
        assert!((mean - 23.24).abs() < 1e-9);
        assert!((var.sqrt() - 22.94).abs() < 1e-9);
    }

    #[test]
    fn synthetic_sites_are_reproducible_and_valid() {
        let a = synthetic_sites(50, 3, &SyntheticLabels::global());
        assert_eq!(a, synthetic_sites(50, 3, &SyntheticLabels::global()));
        assert!(a.iter().all(|s| (0.5..=436.44).contains(&s.pm25)));
    }
}
