use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::models::{image_to_tensor, Model};
use crate::nn::{LayerSpec, Mode, Network, Scalar, Tensor};
use crate::tiles::TileImage;

/// Row-major map with values in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn normalized(mut self) -> Self {
        let max = self.max();
        if max > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= max);
        }
        self
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    pub fn upsample(&self, width: usize, height: usize) -> Heatmap {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let coord = |i: usize, out: usize, inp: usize| {
            let f = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
            let lo = f.floor() as usize;
            (lo, (lo + 1).min(inp - 1), f - lo as f64)
        };
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, ty) = coord(y, height, self.height);
            for x in 0..width {
                let (x0, x1, tx) = coord(x, width, self.width);
                let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
                let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
                values.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        Heatmap { width, height, values }
    }
}

/// What the heatmap explains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamTarget {
    /// 1-based class; differentiated at the pre-softmax score.
    Class(u8),
    /// The single output of a regression network.
    Output,
}

fn spatial(t: &Tensor<impl Scalar>) -> Result<[usize; 3], EvalError> {
    match *t.shape() {
        [h, w, k] | [1, h, w, k] => Ok([h, w, k]),
        _ => Err(EvalError::Shape(format!("feature maps {:?}", t.shape()))),
    }
}

/// Channel weights are spatial means of `grads`; the map is
/// ReLU(Σ α_k A_k) scaled so its maximum is 1 (an all-zero map stays zero).
pub fn cam_from_activations<T: Scalar>(activations: &Tensor<T>, grads: &Tensor<T>) -> Result<Heatmap, EvalError> {
    let [h, w, k] = spatial(activations)?;
    if spatial(grads)? != [h, w, k] {
        return Err(EvalError::Shape(format!("gradients {:?} for maps {:?}", grads.shape(), activations.shape())));
    }
    let mut alpha = vec![0.0f64; k];
    for px in grads.data().chunks_exact(k) {
        for (a, g) in alpha.iter_mut().zip(px) {
            *a += g.as_f64();
        }
    }
    alpha.iter_mut().for_each(|a| *a /= (h * w) as f64);
    let values = activations
        .data()
        .chunks_exact(k)
        .map(|px| px.iter().zip(&alpha).map(|(v, a)| v.as_f64() * a).sum::<f64>().max(0.0))
        .collect();
    Ok(Heatmap { width: w, height: h, values }.normalized())
}

/// Layer whose output serves as the feature maps: the last convolution, or
/// the activation directly after it.
pub fn feature_layer(layers: &[LayerSpec]) -> Option<usize> {
    let conv = layers.iter().rposition(LayerSpec::is_convolution)?;
    Some(if layers.get(conv + 1) == Some(&LayerSpec::ReLU) { conv + 1 } else { conv })
}

pub fn grad_cam_network<T: Scalar>(
    network: &Network<T>,
    input: &Tensor<T>,
    target: CamTarget,
) -> Result<Heatmap, EvalError> {
    let layers = network.layers();
    let feature = feature_layer(layers).ok_or(EvalError::NoConvLayer)?;
    let batch = match input.rank() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(input.shape());
            input.clone().reshape(&shape)?
        }
        _ => input.clone(),
    };
    if batch.shape()[0] != 1 {
        return Err(EvalError::Shape("grad_cam takes a single image".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(0);
    let (_, tape) = network.forward(&batch, Mode::Infer, &mut rng)?;
    let depth = if layers.last() == Some(&LayerSpec::Softmax) { layers.len() - 1 } else { layers.len() };
    let scores = tape.layer_output(depth - 1);
    let width = scores.len();
    let index = match target {
        CamTarget::Class(c) if (1..=width).contains(&(c as usize)) => c as usize - 1,
        CamTarget::Output if width == 1 => 0,
        _ => return Err(EvalError::InvalidTarget(format!("{target:?} for {width} outputs"))),
    };
    let mut seed = Tensor::zeros(scores.shape());
    seed.data_mut()[index] = T::one();
    let activations = tape.layer_output(feature).clone();
    let (_, grads) = network.backward_from(tape, depth, &seed, Some(feature))?;
    let grads = grads.expect("feature layer lies below depth");
    let cam = cam_from_activations(&activations, &grads)?;
    let (h, w) = (batch.shape()[1], batch.shape()[2]);
    Ok(cam.upsample(w, h).normalized())
}

pub fn grad_cam(model: &Model, image: &TileImage, target: CamTarget) -> Result<Heatmap, EvalError> {
    model.check_image(image)?;
    grad_cam_network(&model.network, &image_to_tensor(image), target)
}
