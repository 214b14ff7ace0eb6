use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::callbacks::{early_stop, reduce_lr_on_plateau, MetricKind, TrainingHistory};
use super::checkpoint::save_checkpoint;
use super::leaderboard::LeaderboardEntry;
use super::optim::{OptimizerSpec, OptimizerState};
use super::TrainError;
use crate::dataset::{in_split, ManifestEntry, Split};
use crate::models::{
    argmax, build_model, image_to_tensor, Head, Model, ModelConfig, TargetScaling, DECILE_CLASSES,
};
use crate::nn::{categorical_crossentropy, mse_with_grad, one_hot, Mode, Tensor};
use crate::tiles::TileImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Drives the per-epoch shuffle and dropout masks.
    pub seed: u64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { batch_size: 64, max_epochs: 100, seed: 0, lr_patience: 10, lr_factor: 0.1, stop_patience: 20 }
    }
}

/// One preprocessed training example: `[H, W, 3]` pixels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub pm25: f64,
    pub class: Option<u8>,
}

impl Sample {
    pub fn from_tile(tile: &TileImage, pm25: f64, class: Option<u8>) -> Self {
        let image = image_to_tensor(tile);
        let shape = image.shape()[1..].to_vec();
        Self { image: image.reshape(&shape).expect("same length"), pm25, class }
    }
}

pub struct FitOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub history: TrainingHistory,
    /// 1-based.
    pub best_epoch: usize,
    pub best_metric: f64,
}

pub fn metric_for(head: Head) -> MetricKind {
    match head {
        Head::Regression => MetricKind::Rmse,
        Head::Decile10 => MetricKind::Accuracy,
    }
}

pub fn make_batch(samples: &[Sample], indices: &[usize]) -> Result<Tensor<f32>, TrainError> {
    let first = &samples[indices[0]].image;
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(indices.len() * first.len());
    for &i in indices {
        let img = &samples[i].image;
        if img.shape() != first.shape() {
            return Err(TrainError::ShapeMismatch(format!("sample {i} is {:?}", img.shape())));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::new(shape, data)?)
}

fn classes_of(samples: &[Sample]) -> Result<Vec<u8>, TrainError> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| match s.class {
            Some(c) if (1..=DECILE_CLASSES as u8).contains(&c) => Ok(c),
            _ => Err(TrainError::MissingClass(i)),
        })
        .collect()
}

/// Mini-batch training with per-epoch validation, both plateau callbacks and
/// best-epoch retention. `validate` is called after every epoch with the
/// current model and the 1-based epoch number, and returns the monitored
/// metric for the head's task.
pub fn fit<F>(
    mut model: Model,
    train: &[Sample],
    optimizer: OptimizerSpec,
    opts: &TrainOptions,
    mut validate: F,
) -> Result<FitOutcome, TrainError>
where
    F: FnMut(&Model, usize) -> Result<f64, TrainError>,
{
    if train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if opts.batch_size == 0 {
        return Err(TrainError::InvalidOptions("batch_size must be positive".into()));
    }
    let head = model.config.head;
    let classes = match head {
        Head::Decile10 => Some(classes_of(train)?),
        Head::Regression => {
            let labels: Vec<f64> = train.iter().map(|s| s.pm25).collect();
            model.target = TargetScaling::standardizing(&labels);
            None
        }
    };
    let targets: Vec<f32> = train.iter().map(|s| model.target.to_unit(s.pm25) as f32).collect();
    let depth = model.network.layers().len();
    let mut state = OptimizerState::<f32>::new(optimizer)?;
    let mut rng = SplitMix64::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainingHistory::new(metric_for(head));
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let x = make_batch(train, chunk)?;
            let (out, tape) = model.network.forward(&x, Mode::Train, &mut rng)?;
            let (loss, grads) = match &classes {
                None => {
                    let y = Tensor::new(vec![chunk.len(), 1], chunk.iter().map(|&i| targets[i]).collect())?;
                    let (loss, g) = mse_with_grad(&out, &y)?;
                    (loss, model.network.backward(tape, &g)?)
                }
                Some(classes) => {
                    // softmax and cross-entropy fused: d loss / d logits = (p − y) / n
                    let batch_classes: Vec<u8> = chunk.iter().map(|&i| classes[i]).collect();
                    let y: Tensor<f32> = one_hot(&batch_classes, DECILE_CLASSES);
                    let loss = categorical_crossentropy(&out, &y)?;
                    let inv_n = 1.0 / chunk.len() as f32;
                    let g = out.data().iter().zip(y.data()).map(|(p, t)| (p - t) * inv_n).collect();
                    let g = Tensor::new(out.shape().to_vec(), g)?;
                    (loss, model.network.backward_from(tape, depth - 1, &g, None)?.0)
                }
            };
            state.step(model.network.params_mut(), &grads.params)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val = validate(&model, epoch)?;
        if !val.is_finite() || !train_loss.is_finite() {
            return Err(TrainError::NonFinite(epoch));
        }
        let lr = state.learning_rate;
        history.push(train_loss, val, lr);
        if best.as_ref().is_none_or(|(_, b, _)| history.metric.goal().improves(val, *b)) {
            best = Some((epoch, val, model.clone()));
        }
        log::info!("epoch {epoch}: loss {train_loss:.5} val {val:.5} lr {lr:e}");
        state.learning_rate = reduce_lr_on_plateau(&history, opts.lr_patience, opts.lr_factor, lr);
        if early_stop(&history, opts.stop_patience) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (best_epoch, best_metric, model) = best.ok_or(TrainError::InvalidOptions("max_epochs is 0".into()))?;
    Ok(FitOutcome { model, history, best_epoch, best_metric })
}

fn for_batches<R: Send>(
    samples: &[Sample],
    batch: usize,
    f: impl Fn(&Tensor<f32>) -> Result<Vec<R>, TrainError> + Sync,
) -> Result<Vec<R>, TrainError> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch.max(1)) {
        out.extend(f(&make_batch(samples, chunk)?)?);
    }
    Ok(out)
}

/// Regression predictions in µg/m³.
pub fn predict_pm25(model: &Model, samples: &[Sample]) -> Result<Vec<f64>, TrainError> {
    for_batches(samples, 64, |x| Ok(model.predict_pm25(x)?))
}

pub fn predict_probabilities(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<f64>>, TrainError> {
    for_batches(samples, 64, |x| Ok(model.predict_probs(x)?))
}

pub fn predict_classes(model: &Model, samples: &[Sample]) -> Result<Vec<u8>, TrainError> {
    Ok(predict_probabilities(model, samples)?.iter().map(|p| argmax(p) as u8 + 1).collect())
}

/// Validation RMSE (µg/m³) or decile accuracy, depending on the head.
pub fn validation_metric(model: &Model, samples: &[Sample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit(Split::Validation));
    }
    match model.config.head {
        Head::Regression => {
            let preds = predict_pm25(model, samples)?;
            let truths: Vec<f64> = samples.iter().map(|s| s.pm25).collect();
            Ok(crate::eval::rmse(&preds, &truths)?)
        }
        Head::Decile10 => {
            let preds = predict_classes(model, samples)?;
            let truths = classes_of(samples)?;
            let hits = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
            Ok(hits as f64 / samples.len() as f64)
        }
    }
}

/// Decode manifest images (resizing to `input_size` when needed).
pub fn load_samples(entries: &[&ManifestEntry], input_size: usize) -> Result<Vec<Sample>, TrainError> {
    entries
        .par_iter()
        .map(|e| {
            let bytes =
                std::fs::read(&e.image_path).map_err(|_| TrainError::ImageMissing(e.image_path.clone()))?;
            let mut tile = TileImage::decode_png(&bytes)?;
            if tile.width as usize != input_size || tile.height as usize != input_size {
                tile = tile.resized(input_size as u32);
            }
            Ok(Sample::from_tile(&tile, e.pm25, e.decile_class))
        })
        .collect()
}

pub struct TrainRun {
    pub model: Model,
    pub checkpoint: Vec<u8>,
    pub history: TrainingHistory,
    pub leaderboard: LeaderboardEntry,
}

/// Train on the manifest's Train split, monitoring its Validation split.
/// When `checkpoint_path` is given the retained checkpoint is written there.
pub fn train_model(
    config: &ModelConfig,
    manifest: &[ManifestEntry],
    optimizer: OptimizerSpec,
    opts: &TrainOptions,
    checkpoint_path: Option<&Path>,
) -> Result<TrainRun, TrainError> {
    let train_entries = in_split(manifest, Split::Train);
    let val_entries = in_split(manifest, Split::Validation);
    if train_entries.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val_entries.is_empty() {
        return Err(TrainError::EmptySplit(Split::Validation));
    }
    let train = load_samples(&train_entries, config.input_size)?;
    let val = load_samples(&val_entries, config.input_size)?;
    log::info!("training on {} samples, validating on {}", train.len(), val.len());
    let model = build_model(config)?;
    let outcome = fit(model, &train, optimizer, opts, |m, _| validation_metric(m, &val))?;
    let checkpoint = save_checkpoint(&outcome.model);
    if let Some(path) = checkpoint_path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, &checkpoint)?;
    }
    let leaderboard = LeaderboardEntry {
        base: config.base,
        zoom: train_entries[0].zoom,
        optimizer: optimizer.kind.name().into(),
        learning_rate: optimizer.learning_rate,
        metric: outcome.history.metric,
        best_metric: outcome.best_metric,
        best_epoch: outcome.best_epoch,
        checkpoint_path: checkpoint_path.map(|p| p.display().to_string()),
    };
    Ok(TrainRun { model: outcome.model, checkpoint, history: outcome.history, leaderboard })
}
