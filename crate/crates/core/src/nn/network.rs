use indexmap::IndexMap;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::kernels::{self, Padding};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    Conv2D { out_channels: usize, kernel: usize, stride: usize, padding: Padding },
    SeparableConv2D { out_channels: usize, kernel: usize, stride: usize, padding: Padding },
    ReLU,
    MaxPool2D,
    GlobalAveragePool,
    Dense { units: usize },
    Dropout { rate: f64 },
    Softmax,
    Linear,
}

impl LayerSpec {
    pub fn is_convolution(&self) -> bool {
        matches!(self, LayerSpec::Conv2D { .. } | LayerSpec::SeparableConv2D { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub type ParamMap<T = f32> = IndexMap<String, Tensor<T>>;

pub fn param_name(layer: usize, role: &str) -> String {
    format!("layer{layer}.{role}")
}

/// Inverted dropout. In `Infer` mode (or with `rate == 0`) this is the
/// identity and draws nothing from `rng`. Returns the per-element scale
/// that was applied, which is also the backward multiplier.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> (Tensor<T>, Option<Vec<T>>) {
    if mode == Mode::Infer || rate == 0.0 {
        return (input.clone(), None);
    }
    let keep = T::of_f64(1.0 / (1.0 - rate));
    let scales: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&scales).map(|(&x, &s)| x * s).collect();
    (Tensor::new(input.shape().to_vec(), data).expect("same shape"), Some(scales))
}

enum Cache<T> {
    None,
    MaxPool(Vec<u32>),
    Dropout(Option<Vec<T>>),
    Softmax(Tensor<T>),
    Separable(Tensor<T>),
}

/// Forward intermediates for one pass. Consumed by [`Network::backward`].
pub struct Tape<T = f32> {
    inputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
    output: Tensor<T>,
}

impl<T: Scalar> Tape<T> {
    /// The activation produced by layer `index`.
    pub fn layer_output(&self, index: usize) -> &Tensor<T> {
        self.inputs.get(index + 1).unwrap_or(&self.output)
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub params: ParamMap<T>,
    pub input: Tensor<T>,
}

/// A sequential stack of layers over `[H, W, C]` images, plus its named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    params: ParamMap<T>,
}

/// Walk the layer list, validating it and collecting parameter shapes.
/// Returns the parameter shapes and the per-item output shape.
pub fn infer_shapes(
    input_shape: [usize; 3],
    layers: &[LayerSpec],
) -> Result<(Vec<(String, Vec<usize>)>, Vec<usize>), NnError> {
    let mut shape = input_shape.to_vec();
    let mut params = Vec::new();
    let conv_out = |shape: &[usize], k, s, p| -> Result<(usize, usize), NnError> {
        let g = kernels::ConvGeometry::new(shape[0], shape[1], k, s, p)?;
        Ok((g.out_h, g.out_w))
    };
    for (i, layer) in layers.iter().enumerate() {
        let spatial = shape.len() == 3;
        match *layer {
            LayerSpec::Conv2D { out_channels, kernel, stride, padding } => {
                if !spatial || out_channels == 0 {
                    return Err(NnError::InvalidLayer(i, "Conv2D needs a spatial input".into()));
                }
                let (h, w) = conv_out(&shape, kernel, stride, padding)?;
                params.push((param_name(i, "kernel"), vec![kernel, kernel, shape[2], out_channels]));
                params.push((param_name(i, "bias"), vec![out_channels]));
                shape = vec![h, w, out_channels];
            }
            LayerSpec::SeparableConv2D { out_channels, kernel, stride, padding } => {
                if !spatial || out_channels == 0 {
                    return Err(NnError::InvalidLayer(
                        i,
                        "SeparableConv2D needs a spatial input".into(),
                    ));
                }
                let (h, w) = conv_out(&shape, kernel, stride, padding)?;
                params.push((param_name(i, "depthwise"), vec![kernel, kernel, shape[2]]));
                params.push((param_name(i, "pointwise"), vec![1, 1, shape[2], out_channels]));
                params.push((param_name(i, "bias"), vec![out_channels]));
                shape = vec![h, w, out_channels];
            }
            LayerSpec::MaxPool2D => {
                if !spatial || shape[0] < 2 || shape[1] < 2 {
                    return Err(NnError::InvalidLayer(i, format!("MaxPool2D on {shape:?}")));
                }
                shape = vec![shape[0] / 2, shape[1] / 2, shape[2]];
            }
            LayerSpec::GlobalAveragePool => {
                if !spatial {
                    return Err(NnError::InvalidLayer(i, "pooling needs a spatial input".into()));
                }
                shape = vec![shape[2]];
            }
            LayerSpec::Dense { units } => {
                if spatial || units == 0 {
                    return Err(NnError::InvalidLayer(i, "Dense needs a flat input".into()));
                }
                params.push((param_name(i, "kernel"), vec![shape[0], units]));
                params.push((param_name(i, "bias"), vec![units]));
                shape = vec![units];
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::InvalidLayer(i, format!("dropout rate {rate}")));
                }
            }
            LayerSpec::ReLU | LayerSpec::Softmax | LayerSpec::Linear => {}
        }
    }
    Ok((params, shape))
}

impl<T: Scalar> Network<T> {
    /// A network with all parameters zero.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let (shapes, _) = infer_shapes(input_shape, &layers)?;
        let params = shapes.into_iter().map(|(name, s)| (name, Tensor::zeros(&s))).collect();
        Ok(Self { input_shape, layers, params })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        infer_shapes(self.input_shape, &self.layers).expect("validated at construction").1
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamMap<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap<T> {
        &mut self.params
    }

    /// Replace all parameters; names and shapes must match exactly.
    pub fn set_params(&mut self, params: ParamMap<T>) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch("parameter count differs".into()));
        }
        for ((name, old), (new_name, new)) in self.params.iter().zip(&params) {
            if name != new_name || old.shape() != new.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {new_name} {:?} does not match {name} {:?}",
                    new.shape(),
                    old.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    fn param(&self, layer: usize, role: &str) -> &Tensor<T> {
        &self.params[&param_name(layer, role)]
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<(), NnError> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(NnError::ShapeMismatch(format!(
                "batch {s:?} does not match input shape {:?}",
                self.input_shape
            )));
        }
        Ok(())
    }

    fn run_layer(
        &self,
        i: usize,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, Cache<T>), NnError> {
        Ok(match self.layers[i] {
            LayerSpec::Conv2D { stride, padding, .. } => (
                kernels::conv2d_forward(
                    x,
                    self.param(i, "kernel"),
                    self.param(i, "bias"),
                    stride,
                    padding,
                )?,
                Cache::None,
            ),
            LayerSpec::SeparableConv2D { stride, padding, .. } => {
                let mid = kernels::depthwise_forward(x, self.param(i, "depthwise"), stride, padding)?;
                let out = kernels::conv2d_forward(
                    &mid,
                    self.param(i, "pointwise"),
                    self.param(i, "bias"),
                    1,
                    Padding::Valid,
                )?;
                (out, Cache::Separable(mid))
            }
            LayerSpec::ReLU => (kernels::relu_forward(x), Cache::None),
            LayerSpec::MaxPool2D => {
                let (y, arg) = kernels::maxpool2_forward(x)?;
                (y, Cache::MaxPool(arg))
            }
            LayerSpec::GlobalAveragePool => (kernels::global_avg_pool_forward(x)?, Cache::None),
            LayerSpec::Dense { .. } => (
                kernels::dense_forward(x, self.param(i, "kernel"), self.param(i, "bias"))?,
                Cache::None,
            ),
            LayerSpec::Dropout { rate } => {
                let (y, scales) = dropout(x, rate, mode, rng);
                (y, Cache::Dropout(scales))
            }
            LayerSpec::Softmax => {
                let y = kernels::softmax_forward(x);
                (y.clone(), Cache::Softmax(y))
            }
            LayerSpec::Linear => (x.clone(), Cache::None),
        })
    }

    /// Forward pass over a `[N, H, W, C]` batch, recording what backward needs.
    pub fn forward(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, Tape<T>), NnError> {
        self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for i in 0..self.layers.len() {
            let (y, cache) = self.run_layer(i, &x, mode, rng)?;
            y.debug_check_finite("forward activation");
            inputs.push(x);
            caches.push(cache);
            x = y;
        }
        Ok((x.clone(), Tape { inputs, caches, output: x }))
    }

    /// Inference-mode forward pass without a tape.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_batch(batch)?;
        let mut rng = <rand_xoshiro::SplitMix64 as rand::SeedableRng>::seed_from_u64(0);
        let mut x = batch.clone();
        for i in 0..self.layers.len() {
            x = self.run_layer(i, &x, Mode::Infer, &mut rng)?.0;
        }
        Ok(x)
    }

    /// Reverse-mode gradients of a scalar objective whose gradient with respect
    /// to the network output is `out_grad`.
    pub fn backward(&self, tape: Tape<T>, out_grad: &Tensor<T>) -> Result<Gradients<T>, NnError> {
        let depth = self.layers.len();
        Ok(self.backward_from(tape, depth, out_grad, None)?.0)
    }

    /// Backpropagate through layers `0..depth` only, with `grad` taken as the
    /// gradient of the objective with respect to the output of layer
    /// `depth - 1`. When `capture` is `Some(j)` the gradient with respect to
    /// the output of layer `j` (`j < depth`) is also returned.
    pub fn backward_from(
        &self,
        tape: Tape<T>,
        depth: usize,
        grad: &Tensor<T>,
        capture: Option<usize>,
    ) -> Result<(Gradients<T>, Option<Tensor<T>>), NnError> {
        if depth == 0 || depth > self.layers.len() {
            return Err(NnError::ShapeMismatch(format!("backward depth {depth}")));
        }
        let expected = tape.layer_output(depth - 1).shape();
        if grad.shape() != expected {
            return Err(NnError::ShapeMismatch(format!(
                "output gradient {:?} for activation {expected:?}",
                grad.shape()
            )));
        }
        let mut grads: ParamMap<T> =
            self.params.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
        let mut captured = None;
        let mut g = grad.clone();
        let Tape { inputs, caches, .. } = tape;
        for (i, (x, cache)) in inputs.into_iter().zip(caches).enumerate().take(depth).rev() {
            if capture == Some(i) {
                captured = Some(g.clone());
            }
            g = match (&self.layers[i], cache) {
                (LayerSpec::Conv2D { stride, padding, .. }, _) => {
                    let r = kernels::conv2d_backward(&x, self.param(i, "kernel"), &g, *stride, *padding)?;
                    grads[&param_name(i, "kernel")] = r.weights;
                    grads[&param_name(i, "bias")] = r.bias;
                    r.input
                }
                (LayerSpec::SeparableConv2D { stride, padding, .. }, Cache::Separable(mid)) => {
                    let pw = kernels::conv2d_backward(
                        &mid,
                        self.param(i, "pointwise"),
                        &g,
                        1,
                        Padding::Valid,
                    )?;
                    let (dx, ddw) = kernels::depthwise_backward(
                        &x,
                        self.param(i, "depthwise"),
                        &pw.input,
                        *stride,
                        *padding,
                    )?;
                    grads[&param_name(i, "depthwise")] = ddw;
                    grads[&param_name(i, "pointwise")] = pw.weights;
                    grads[&param_name(i, "bias")] = pw.bias;
                    dx
                }
                (LayerSpec::ReLU, _) => kernels::relu_backward(&x, &g),
                (LayerSpec::MaxPool2D, Cache::MaxPool(arg)) => {
                    kernels::maxpool2_backward(x.shape(), &arg, &g)?
                }
                (LayerSpec::GlobalAveragePool, _) => {
                    kernels::global_avg_pool_backward(x.shape(), &g)?
                }
                (LayerSpec::Dense { .. }, _) => {
                    let r = kernels::dense_backward(&x, self.param(i, "kernel"), &g)?;
                    grads[&param_name(i, "kernel")] = r.weights;
                    grads[&param_name(i, "bias")] = r.bias;
                    r.input
                }
                (LayerSpec::Dropout { .. }, Cache::Dropout(scales)) => match scales {
                    None => g,
                    Some(s) => {
                        let data = g.data().iter().zip(&s).map(|(&a, &b)| a * b).collect();
                        Tensor::new(g.shape().to_vec(), data)?
                    }
                },
                (LayerSpec::Softmax, Cache::Softmax(y)) => kernels::softmax_backward(&y, &g),
                (LayerSpec::Linear, _) => g,
                _ => unreachable!("cache kind always matches its layer"),
            };
            g.debug_check_finite("backward gradient");
        }
        Ok((Gradients { params: grads, input: g }, captured))
    }
}

/// Rank-3 convenience wrapper: a separable convolution is a depthwise stage
/// followed by a 1×1 pointwise projection with bias.
pub fn separable_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    depthwise: &Tensor<T>,
    pointwise: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let mid = kernels::depthwise_forward(input, depthwise, stride, padding)?;
    kernels::conv2d_forward(&mid, pointwise, bias, 1, Padding::Valid)
}
