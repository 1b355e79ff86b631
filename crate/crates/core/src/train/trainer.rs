use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::derive_seed;
use super::loss::{cross_entropy, cross_entropy_on_tape, one_hot};
use super::metrics::Metrics;
use super::optim::Optimizer;
use super::{TrainConfig, TrainError};
use crate::autodiff::{Tape, Tensor};
use crate::features::SegmentFeatures;
use crate::model::{forward, forward_on_tape, ForwardOutput, ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean (class-weighted) cross-entropy over the training videos seen this epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Whether this epoch produced the kept checkpoint so far.
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best parameters by validation F1, or the final ones without a validation split.
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
    /// Zero-based epoch the returned parameters come from.
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
    pub stopped_early: bool,
}

/// Forward pass over the selected videos, in index order.
pub fn predict_all(
    videos: &[SegmentFeatures],
    indices: &[usize],
    params: &ModelParams<f32>,
    model: &ModelConfig,
) -> Result<Vec<ForwardOutput>, TrainError> {
    indices
        .par_iter()
        .map(|&i| forward(&videos[i], params, model).map_err(TrainError::from))
        .collect()
}

fn evaluate_with_loss(
    videos: &[SegmentFeatures],
    labels: &[u8],
    indices: &[usize],
    params: &ModelParams<f32>,
    model: &ModelConfig,
) -> Result<(Metrics, f64), TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Empty { what: "evaluation split" });
    }
    let outputs = predict_all(videos, indices, params, model)?;
    let predicted: Vec<u8> = outputs.iter().map(ForwardOutput::predicted_label).collect();
    let truth: Vec<u8> = indices.iter().map(|&i| labels[i]).collect();
    let mut loss = 0.0;
    for (out, &y) in outputs.iter().zip(&truth) {
        loss += cross_entropy(out.h_hat, one_hot(y))?;
    }
    Ok((Metrics::from_predictions(&predicted, &truth), loss / indices.len() as f64))
}

/// Confusion-matrix metrics of `argmax h_hat` against the labels.
pub fn evaluate(
    videos: &[SegmentFeatures],
    labels: &[u8],
    indices: &[usize],
    params: &ModelParams<f32>,
    model: &ModelConfig,
) -> Result<Metrics, TrainError> {
    evaluate_with_loss(videos, labels, indices, params, model).map(|(m, _)| m)
}

/// Loss and gradients of one mini-batch. Per-video work runs in parallel;
/// gradients are summed in batch order so the result does not depend on
/// scheduling.
fn batch_gradients(
    videos: &[SegmentFeatures],
    labels: &[u8],
    batch: &[usize],
    params: &ModelParams<f32>,
    model: &ModelConfig,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Vec<Tensor<f32>>), TrainError> {
    let scale = 1.0 / batch.len() as f64;
    let per_video: Vec<(f64, Vec<Tensor<f32>>)> = batch
        .par_iter()
        .map(|&i| -> Result<_, TrainError> {
            let tape = Tape::new();
            let vars = params.register(&tape);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1, epoch as u64, i as u64]));
            let out = forward_on_tape(&tape, &vars, &videos[i], model, Some(&mut rng))?;
            let weight = config.class_weight(labels[i]);
            let loss = cross_entropy_on_tape(&tape, out.h_hat, labels[i], weight * scale)?;
            let grads = tape.gradients(loss, vars.all())?;
            Ok((tape.value(loss).item() as f64 / scale, grads.grads))
        })
        .collect::<Result<_, _>>()?;

    let mut iter = per_video.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch");
    for (l, grads) in iter {
        loss += l;
        for (acc, g) in total.iter_mut().zip(&grads) {
            acc.add_assign(g);
        }
    }
    Ok((loss, total))
}

/// Mini-batch training with validation-F1 model selection and early stopping.
///
/// With an empty `val_idx` every epoch counts as an improvement and the
/// final parameters are returned.
pub fn train(
    videos: &[SegmentFeatures],
    labels: &[u8],
    train_idx: &[usize],
    val_idx: &[usize],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::Empty { what: "training split" });
    }
    let first = labels[train_idx[0]];
    if train_idx.iter().all(|&i| labels[i] == first) {
        return Err(TrainError::SingleClass(first));
    }

    let mut params = ModelParams::<f32>::init(model, derive_seed(config.seed, &[0]))?;
    let mut optimizer = Optimizer::new(config, &params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[2]));
    let mut order = train_idx.to_vec();

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_score: Option<(f64, f64)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = batch_gradients(videos, labels, batch, &params, model, config, epoch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                log::error!("training diverged at epoch {epoch}, batch {b} (loss {loss})");
                return Err(TrainError::Diverged { epoch, batch: b, loss });
            }
            epoch_loss += loss;
            optimizer.step(&mut params, &grads);
        }
        let train_loss = epoch_loss / order.len() as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_loss: None,
            val_f1: None,
            val_accuracy: None,
            improved: true,
        };
        if !val_idx.is_empty() {
            let (metrics, val_loss) = evaluate_with_loss(videos, labels, val_idx, &params, model)?;
            if !val_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: 0, loss: val_loss });
            }
            record.val_loss = Some(val_loss);
            record.val_f1 = Some(metrics.f1);
            record.val_accuracy = Some(metrics.accuracy);
            // higher F1 wins; equal F1 falls back to lower validation loss
            record.improved = match best_score {
                None => true,
                Some((f1, loss)) => metrics.f1 > f1 || (metrics.f1 == f1 && val_loss < loss),
            };
            if record.improved {
                best_score = Some((metrics.f1, val_loss));
            }
        }
        log::debug!(
            "epoch {epoch}: train {train_loss:.4} val_f1 {:?} val_loss {:?}",
            record.val_f1,
            record.val_loss
        );

        let improved = record.improved;
        history.push(record);
        if improved {
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
        best_val_f1: best_score.map(|(f1, _)| f1),
        stopped_early,
    })
}
