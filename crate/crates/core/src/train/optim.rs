use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::{ParamMap, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    RMSProp { rho: f64, epsilon: f64 },
    Nadam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::RMSProp { rho: 0.9, epsilon: 1e-7 }
    }

    pub fn nadam() -> Self {
        OptimizerKind::Nadam { beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::RMSProp { .. } => "rmsprop",
            OptimizerKind::Nadam { .. } => "nadam",
        }
    }

    /// `rmsprop` or `nadam` with default hyperparameters.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rmsprop" => Some(Self::rmsprop()),
            "nadam" => Some(Self::nadam()),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerSpec {
    pub fn nadam(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::nadam(), learning_rate }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::rmsprop(), learning_rate }
    }
}

/// Optimizer hyperparameters plus one set of accumulators per parameter
/// (`[s]` for RMSProp, `[m, v]` for Nadam).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step_count: u64,
    slots: IndexMap<String, Vec<Tensor<T>>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self, TrainError> {
        if !(spec.learning_rate > 0.0) || !spec.learning_rate.is_finite() {
            return Err(TrainError::InvalidLearningRate(spec.learning_rate));
        }
        Ok(Self { kind: spec.kind, learning_rate: spec.learning_rate, step_count: 0, slots: IndexMap::new() })
    }

    pub fn accumulators(&self, name: &str) -> Option<&[Tensor<T>]> {
        self.slots.get(name).map(Vec::as_slice)
    }

    /// Apply one update in place.
    pub fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<(), TrainError> {
        if params.len() != grads.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} parameters, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (name, p) in params.iter() {
            match grads.get(name) {
                Some(g) if g.shape() == p.shape() => {}
                _ => return Err(TrainError::ShapeMismatch(format!("gradient for `{name}`"))),
            }
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let lr = self.learning_rate;
        let n_slots = match self.kind {
            OptimizerKind::RMSProp { .. } => 1,
            OptimizerKind::Nadam { .. } => 2,
        };
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let slots = self
                .slots
                .entry(name.clone())
                .or_insert_with(|| vec![Tensor::zeros(p.shape()); n_slots]);
            match self.kind {
                OptimizerKind::RMSProp { rho, epsilon } => {
                    let s = slots[0].data_mut();
                    for ((theta, &gi), si) in p.data_mut().iter_mut().zip(g.data()).zip(s.iter_mut()) {
                        let gi = gi.as_f64();
                        let s_new = rho * si.as_f64() + (1.0 - rho) * gi * gi;
                        *si = T::of_f64(s_new);
                        let denom = s_new.sqrt() + epsilon;
                        if gi != 0.0 && denom > 0.0 {
                            *theta = T::of_f64(theta.as_f64() - lr * gi / denom);
                        }
                    }
                }
                OptimizerKind::Nadam { beta1, beta2, epsilon } => {
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    let (m, v) = slots.split_at_mut(1);
                    let (m, v) = (m[0].data_mut(), v[0].data_mut());
                    for (((theta, &gi), mi), vi) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        let gi = gi.as_f64();
                        let m_new = beta1 * mi.as_f64() + (1.0 - beta1) * gi;
                        let v_new = beta2 * vi.as_f64() + (1.0 - beta2) * gi * gi;
                        *mi = T::of_f64(m_new);
                        *vi = T::of_f64(v_new);
                        let num = beta1 * m_new / bc1 + (1.0 - beta1) * gi / bc1;
                        let denom = (v_new / bc2).sqrt() + epsilon;
                        if num != 0.0 && denom > 0.0 {
                            *theta = T::of_f64(theta.as_f64() - lr * num / denom);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn step_as<T: Scalar>(
    params: &mut ParamMap<T>,
    grads: &ParamMap<T>,
    state: &mut OptimizerState<T>,
    rmsprop: bool,
) -> Result<(), TrainError> {
    let matches = matches!(
        (rmsprop, state.kind),
        (true, OptimizerKind::RMSProp { .. }) | (false, OptimizerKind::Nadam { .. })
    );
    if !matches {
        return Err(TrainError::WrongOptimizer(state.kind.name()));
    }
    state.step(params, grads)
}

pub fn rmsprop_step<T: Scalar>(
    params: &mut ParamMap<T>,
    grads: &ParamMap<T>,
    state: &mut OptimizerState<T>,
) -> Result<(), TrainError> {
    step_as(params, grads, state, true)
}

pub fn nadam_step<T: Scalar>(
    params: &mut ParamMap<T>,
    grads: &ParamMap<T>,
    state: &mut OptimizerState<T>,
) -> Result<(), TrainError> {
    step_as(params, grads, state, false)
}
