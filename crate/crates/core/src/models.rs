//! Desk-scale convolutional models: a separable-convolution base and a plain
//! convolution base sharing one skeleton, topped with a regression or a
//! ten-class decile head.

use rand::SeedableRng;
use rand_distr::{Distribution, Uniform};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LayerSpec, Network, NnError, Padding, Tensor};
use crate::tiles::TileImage;

pub const DECILE_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("image is {got}x{got_h}, model expects {want}x{want}")]
    ImageSize { got: u32, got_h: u32, want: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    /// Depthwise-separable convolutions (Xception-like).
    SepConv,
    /// Ordinary 3×3 convolutions (VGG-like).
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Regression,
    Decile10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base: Base,
    pub input_size: usize,
    pub base_width: usize,
    pub blocks: usize,
    pub dense_units: usize,
    pub head: Head,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base: Base::SepConv,
            input_size: 64,
            base_width: 8,
            blocks: 3,
            dense_units: 64,
            head: Head::Regression,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.blocks == 0 || self.base_width == 0 || self.dense_units == 0 || self.input_size == 0 {
            return bad("blocks, base_width, dense_units and input_size must be positive".into());
        }
        if self.blocks > 16 || !self.input_size.is_multiple_of(1 << (self.blocks + 1)) {
            return bad(format!(
                "input_size {} must be divisible by 2^(blocks + 1) = {}",
                self.input_size,
                1usize << (self.blocks + 1).min(63)
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {}", self.dropout_rate));
        }
        Ok(())
    }

    pub fn block_channels(&self, block: usize) -> usize {
        (self.base_width << block.min(3)).min(8 * self.base_width)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let conv = |c: usize| match self.base {
            Base::SepConv => {
                LayerSpec::SeparableConv2D { out_channels: c, kernel: 3, stride: 1, padding: Padding::Same }
            }
            Base::Plain => LayerSpec::Conv2D { out_channels: c, kernel: 3, stride: 1, padding: Padding::Same },
        };
        let mut layers = vec![
            LayerSpec::Conv2D { out_channels: self.base_width, kernel: 3, stride: 2, padding: Padding::Same },
            LayerSpec::ReLU,
        ];
        for b in 0..self.blocks {
            let c = self.block_channels(b);
            layers.extend([conv(c), LayerSpec::ReLU, conv(c), LayerSpec::ReLU, LayerSpec::MaxPool2D]);
        }
        layers.extend([
            LayerSpec::GlobalAveragePool,
            LayerSpec::Dropout { rate: self.dropout_rate },
            LayerSpec::Dense { units: self.dense_units },
            LayerSpec::ReLU,
            LayerSpec::Dropout { rate: self.dropout_rate },
        ]);
        match self.head {
            Head::Regression => layers.extend([LayerSpec::Dense { units: 1 }, LayerSpec::Linear]),
            Head::Decile10 => {
                layers.extend([LayerSpec::Dense { units: DECILE_CLASSES }, LayerSpec::Softmax])
            }
        }
        layers
    }
}

/// Affine map between network outputs and µg/m³ for regression heads:
/// `pm25 = offset + scale · output`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }
}

impl TargetScaling {
    /// Standardise to zero mean and unit SD (population SD; 1 if degenerate).
    pub fn standardizing(labels: &[f64]) -> Self {
        let n = labels.len().max(1) as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self { offset: mean, scale: if sd > 0.0 { sd } else { 1.0 } }
    }

    pub fn to_unit(&self, pm25: f64) -> f64 {
        (pm25 - self.offset) / self.scale
    }

    pub fn to_pm25(&self, unit: f64) -> f64 {
        self.offset + self.scale * unit
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub target: TargetScaling,
    pub network: Network<f32>,
}

fn fan_in(name: &str, shape: &[usize]) -> usize {
    match shape {
        [k, k2, cin, _] => k * k2 * cin,
        [k, k2, _] if name.ends_with("depthwise") => k * k2,
        [n, _] => *n,
        _ => 1,
    }
}

/// Build the layer stack and draw He-uniform weights (biases zero) from the config seed.
pub fn build_model(config: &ModelConfig) -> Result<Model, ModelError> {
    config.validate()?;
    let mut network = Network::new([config.input_size, config.input_size, 3], config.layers())?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    for (name, tensor) in network.params_mut().iter_mut() {
        if name.ends_with(".bias") {
            continue;
        }
        let limit = (6.0 / fan_in(name, tensor.shape()) as f64).sqrt() as f32;
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        for v in tensor.data_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(Model { config: config.clone(), target: TargetScaling::default(), network })
}

pub fn count_parameters(model: &Model) -> usize {
    model.network.param_count()
}

/// `[1, H, W, 3]` tensor with pixels scaled to [0, 1].
pub fn image_to_tensor(image: &TileImage) -> Tensor<f32> {
    let data = image.data.iter().map(|&v| f32::from(v) / 255.0).collect();
    Tensor::new(vec![1, image.height as usize, image.width as usize, 3], data)
        .expect("tile length invariant")
}

pub fn batch_from_images(images: &[&TileImage]) -> Result<Tensor<f32>, NnError> {
    let first = images.first().ok_or_else(|| NnError::ShapeMismatch("empty batch".into()))?;
    let (h, w) = (first.height as usize, first.width as usize);
    let mut data = Vec::with_capacity(images.len() * h * w * 3);
    for img in images {
        if (img.height as usize, img.width as usize) != (h, w) {
            return Err(NnError::ShapeMismatch("mixed image sizes in batch".into()));
        }
        data.extend(img.data.iter().map(|&v| f32::from(v) / 255.0));
    }
    Tensor::new(vec![images.len(), h, w, 3], data)
}

impl Model {
    pub fn check_image(&self, image: &TileImage) -> Result<(), ModelError> {
        let want = self.config.input_size;
        if image.width as usize != want || image.height as usize != want {
            return Err(ModelError::ImageSize { got: image.width, got_h: image.height, want });
        }
        Ok(())
    }

    /// Continuous predictions in µg/m³ (regression head).
    pub fn predict_pm25(&self, batch: &Tensor<f32>) -> Result<Vec<f64>, ModelError> {
        let out = self.network.predict(batch)?;
        Ok(out.data().iter().map(|&v| self.target.to_pm25(f64::from(v))).collect())
    }

    /// Class probabilities per row (decile head).
    pub fn predict_probs(&self, batch: &Tensor<f32>) -> Result<Vec<Vec<f64>>, ModelError> {
        let out = self.network.predict(batch)?;
        Ok(out.rows().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect())
    }

    /// Most probable decile class (1-based) per row.
    pub fn predict_classes(&self, batch: &Tensor<f32>) -> Result<Vec<u8>, ModelError> {
        Ok(self.predict_probs(batch)?.iter().map(|p| argmax(p) as u8 + 1).collect())
    }
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(head: Head, base: Base) -> ModelConfig {
        ModelConfig { head, base, input_size: 16, base_width: 4, blocks: 2, dense_units: 8, ..Default::default() }
    }

    #[test]
    fn decile_head_outputs_probabilities() {
        let m = build_model(&small(Head::Decile10, Base::SepConv)).unwrap();
        let x = Tensor::full(&[3, 16, 16, 3], 0.5f32);
        let probs = m.predict_probs(&x).unwrap();
        assert_eq!(probs.len(), 3);
        for row in probs {
            assert_eq!(row.len(), 10);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn regression_head_outputs_one_value() {
        let m = build_model(&small(Head::Regression, Base::Plain)).unwrap();
        let out = m.network.predict(&Tensor::full(&[2, 16, 16, 3], 0.1f32)).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
    }

    #[test]
    fn two_dropouts_around_the_dense_layer() {
        let layers = ModelConfig::default().layers();
        let drops: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Dropout { rate } if *rate == 0.5))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(drops.len(), 2);
        assert_eq!(layers[drops[0] - 1], LayerSpec::GlobalAveragePool);
        assert!(matches!(layers[drops[0] + 1], LayerSpec::Dense { units: 64 }));
        assert_eq!(layers[drops[1] - 1], LayerSpec::ReLU);
        assert!(matches!(layers[drops[1] - 2], LayerSpec::Dense { units: 64 }));
        assert!(matches!(layers[drops[1] + 1], LayerSpec::Dense { units: 1 }));
    }

    #[test]
    fn regression_head_parameter_count() {
        // Dense(1) on 64 units adds 64 weights + 1 bias
        let m = build_model(&ModelConfig::default()).unwrap();
        let p = m.network.params();
        let n = m.network.layers().len();
        let head_kernel = &p[&crate::nn::param_name(n - 2, "kernel")];
        let head_bias = &p[&crate::nn::param_name(n - 2, "bias")];
        assert_eq!(head_kernel.len() + head_bias.len(), 65);
    }

    #[test]
    fn separable_blocks_are_leaner() {
        let sep = count_parameters(&build_model(&ModelConfig::default()).unwrap());
        let plain =
            count_parameters(&build_model(&ModelConfig { base: Base::Plain, ..Default::default() }).unwrap());
        assert!(sep < plain, "{sep} vs {plain}");
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            ModelConfig { blocks: 0, ..Default::default() },
            ModelConfig { input_size: 60, ..Default::default() },
            ModelConfig { dropout_rate: 1.0, ..Default::default() },
        ] {
            assert!(matches!(build_model(&cfg), Err(ModelError::InvalidConfig(_))));
        }
    }

    #[test]
    fn seeded_initialisation() {
        let a = build_model(&ModelConfig { seed: 4, ..Default::default() }).unwrap();
        let b = build_model(&ModelConfig { seed: 4, ..Default::default() }).unwrap();
        let c = build_model(&ModelConfig { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.network.params(), c.network.params());
        for (name, t) in a.network.params() {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn target_scaling_round_trip() {
        let s = TargetScaling::standardizing(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.to_pm25(s.to_unit(3.3)) - 3.3).abs() < 1e-12);
        assert_eq!(TargetScaling::standardizing(&[2.0, 2.0]).scale, 1.0);
    }
}
