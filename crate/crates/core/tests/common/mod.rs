//! Independent oracles and fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use satpm_core::dataset::{decile_class, decile_edges, prepare, ManifestEntry, SplitRatios};
use satpm_core::ingest::{assign_exposures, ExposurePolicy, LabeledSite};
use satpm_core::models::Model;
use satpm_core::nn::{crossentropy_with_grad, mse_with_grad, Mode, Network, Tensor};
use satpm_core::tiles::{cache_key, synthetic_sites, synthetic_tile, SyntheticLabels, TileRequest};
use satpm_core::train::{predict_pm25, Sample, TrainError};

pub const EPS: f64 = 1e-3;

const BASE32: &[u8] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Geohash by integer quantisation and explicit bit interleaving.
pub fn geohash_oracle(lat: f64, lon: f64, precision: usize) -> String {
    let bits = 5 * precision;
    let lon_bits = bits.div_ceil(2);
    let lat_bits = bits / 2;
    let quant = |v: f64, lo: f64, span: f64, n: usize| -> u64 {
        let cells = 1u64 << n;
        (((v - lo) / span * cells as f64).floor() as u64).min(cells - 1)
    };
    let lon_q = quant(lon, -180.0, 360.0, lon_bits);
    let lat_q = quant(lat, -90.0, 180.0, lat_bits);
    let mut word = 0u64;
    for i in 0..bits {
        let bit = if i % 2 == 0 {
            (lon_q >> (lon_bits - 1 - i / 2)) & 1
        } else {
            (lat_q >> (lat_bits - 1 - i / 2)) & 1
        };
        word = (word << 1) | bit;
    }
    (0..precision).map(|c| BASE32[((word >> (5 * (precision - 1 - c))) & 31) as usize] as char).collect()
}

/// Confusion matrix, accuracy and one-off accuracy by a direct double loop.
pub fn classification_oracle(preds: &[u8], truths: &[u8]) -> (f64, f64, [[u64; 10]; 10]) {
    let mut m = [[0u64; 10]; 10];
    for t in 1..=10u8 {
        for p in 1..=10u8 {
            m[t as usize - 1][p as usize - 1] =
                preds.iter().zip(truths).filter(|&(&a, &b)| a == p && b == t).count() as u64;
        }
    }
    let n = preds.len() as f64;
    let hit = (0..10).map(|i| m[i][i]).sum::<u64>() as f64;
    let near = (0..10)
        .flat_map(|i| (0..10).map(move |j| (i, j)))
        .filter(|&(i, j)| (i as i32 - j as i32).abs() <= 1)
        .map(|(i, j)| m[i][j])
        .sum::<u64>() as f64;
    (hit / n, near / n, m)
}

#[derive(Clone, Debug)]
pub enum Objective {
    /// Σ r ⊙ output.
    Projection(Tensor<f64>),
    /// Cross-entropy against one-hot rows (network ends in Softmax).
    CrossEntropy(Tensor<f64>),
    Mse(Tensor<f64>),
}

impl Objective {
    fn value_and_grad(&self, out: &Tensor<f64>) -> (f64, Tensor<f64>) {
        match self {
            Objective::Projection(r) => {
                let v = out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
                (v, r.clone())
            }
            Objective::CrossEntropy(y) => crossentropy_with_grad(out, y).unwrap(),
            Objective::Mse(y) => mse_with_grad(out, y).unwrap(),
        }
    }
}

fn evaluate(net: &Network<f64>, x: &Tensor<f64>, obj: &Objective, mode: Mode, seed: u64) -> f64 {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let (out, _) = net.forward(x, mode, &mut rng).unwrap();
    obj.value_and_grad(&out).0
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter and input element.
pub fn gradient_check(net: &Network<f64>, x: &Tensor<f64>, obj: &Objective, mode: Mode, seed: u64) -> f64 {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let (out, tape) = net.forward(x, mode, &mut rng).unwrap();
    let (_, g) = obj.value_and_grad(&out);
    let grads = net.backward(tape, &g).unwrap();
    let mut worst = 0.0f64;
    for (name, analytic) in &grads.params {
        for i in 0..analytic.len() {
            let mut probe = net.clone();
            let orig = probe.params()[name].data()[i];
            probe.params_mut()[name].data_mut()[i] = orig + EPS;
            let plus = evaluate(&probe, x, obj, mode, seed);
            probe.params_mut()[name].data_mut()[i] = orig - EPS;
            let minus = evaluate(&probe, x, obj, mode, seed);
            worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * EPS)));
        }
    }
    for i in 0..x.len() {
        let mut probe = x.clone();
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + EPS;
        let plus = evaluate(net, &probe, obj, mode, seed);
        probe.data_mut()[i] = orig - EPS;
        let minus = evaluate(net, &probe, obj, mode, seed);
        worst = worst.max(rel_err(grads.input.data()[i], (plus - minus) / (2.0 * EPS)));
    }
    worst
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product::<usize>();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Values at least `gap` away from zero, so ReLU masks survive ±ε probes.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product::<usize>();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn randomize_params(net: &mut Network<f64>, rng: &mut impl Rng, scale: f64) {
    for t in net.params_mut().values_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// A synthetic corpus written to `dir`: labelled sites, one PNG per site and
/// a geohash-disjoint manifest.
pub struct Corpus {
    pub sites: Vec<LabeledSite>,
    pub manifest: Vec<ManifestEntry>,
}

pub fn synthetic_corpus(dir: &Path, count: usize, seed: u64, size_px: u32, zoom: u32) -> Corpus {
    let labels = SyntheticLabels::global();
    let records = synthetic_sites(count, seed, &labels);
    let sites = assign_exposures(&records, ExposurePolicy::PerYear);
    for s in &sites {
        let req = TileRequest::with_any_zoom(s.lat, s.lon, zoom, size_px).unwrap();
        let tile = synthetic_tile(seed, &req, Some(s.label_pm25), labels.max).unwrap();
        std::fs::write(dir.join(cache_key(zoom, s.lat, s.lon)), tile.encode_png()).unwrap();
    }
    let ratios = SplitRatios { train: 0.8, validation: 0.1, test: 0.1 };
    let (manifest, _, _) = prepare(&sites, ratios, seed, zoom, dir).unwrap();
    Corpus { sites, manifest }
}

/// Sixteen samples with evenly spread labels and their own decile classes.
pub fn overfit_fixture() -> Vec<Sample> {
    let labels = SyntheticLabels::global();
    let sites = synthetic_sites(16, 77, &labels);
    // labels spread evenly over the signal range so every sample is distinguishable
    let pm: Vec<f64> = (0..16).map(|i| 5.0 + 25.0 * i as f64).collect();
    let edges = decile_edges(&pm).unwrap();
    sites
        .iter()
        .zip(&pm)
        .map(|(s, &y)| {
            let req = TileRequest::with_any_zoom(s.lat, s.lon, 13, 64).unwrap();
            let tile = synthetic_tile(77, &req, Some(y), labels.max).unwrap();
            Sample::from_tile(&tile, y, Some(decile_class(y, &edges)))
        })
        .collect()
}

/// Training MSE on standardised labels.
pub fn unit_mse(model: &Model, samples: &[Sample]) -> Result<f64, TrainError> {
    let preds = predict_pm25(model, samples)?;
    let s = model.target;
    Ok(preds.iter().zip(samples).map(|(p, t)| (s.to_unit(*p) - s.to_unit(t.pm25)).powi(2)).sum::<f64>()
        / samples.len() as f64)
}
