use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{format_table, mean_metrics, Metrics};
use super::trainer::{evaluate, train};
use super::{Split, TrainConfig, TrainError};
use crate::features::SegmentFeatures;
use crate::model::{Ablation, ModelConfig};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a sub-stream identified by `path` (fold, arm, epoch, ...).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn by_class(indices: impl IntoIterator<Item = usize>, labels: &[u8]) -> [Vec<usize>; 2] {
    let mut classes = [Vec::new(), Vec::new()];
    for i in indices {
        classes[usize::from(labels[i] == 1)].push(i);
    }
    classes
}

/// `k` disjoint folds covering every index. Each class is shuffled with a
/// seeded RNG and dealt round-robin, continuing the deal across classes so
/// fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[10]));
    let mut classes = by_class(0..labels.len(), labels);
    for (class, members) in classes.iter().enumerate() {
        if members.len() < k {
            return Err(TrainError::TooFewPerClass {
                class: class as u8,
                count: members.len(),
                k,
            });
        }
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in classes.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Splits `indices` per class into (train, held-out) with the held-out
/// share rounded per class.
fn split_off(indices: &[usize], labels: &[u8], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for mut members in by_class(indices.iter().copied(), labels) {
        members.shuffle(rng);
        let n_held = ((members.len() as f64) * fraction).round() as usize;
        held.extend_from_slice(&members[..n_held]);
        keep.extend_from_slice(&members[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}

/// Stratified train / validation / test split of all indices.
pub fn stratified_split(labels: &[u8], split: Split, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[11]));
    let all: Vec<usize> = (0..labels.len()).collect();
    let (rest, test) = split_off(&all, labels, split.test, &mut rng);
    let val_share = if split.train + split.val > 0.0 {
        split.val / (split.train + split.val)
    } else {
        0.0
    };
    let (train, val) = split_off(&rest, labels, val_share, &mut rng);
    (train, val, test)
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub repeat: usize,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CvReport {
    pub per_fold: Vec<FoldResult>,
    pub mean: Metrics,
    #[serde(skip)]
    pub folds: Vec<Vec<usize>>,
}

impl CvReport {
    /// One row per fold (and repeat) plus the mean.
    pub fn table(&self) -> String {
        let repeats = self.per_fold.iter().map(|r| r.repeat).max().unwrap_or(0) > 0;
        let mut rows: Vec<(String, Metrics)> = self
            .per_fold
            .iter()
            .map(|r| {
                let name = if repeats {
                    format!("Run {} Fold {}", r.repeat + 1, r.fold + 1)
                } else {
                    format!("Fold {}", r.fold + 1)
                };
                (name, r.metrics)
            })
            .collect();
        rows.push(("Mean".into(), self.mean));
        format_table(&rows)
    }
}

fn cv_on_folds(
    videos: &[SegmentFeatures],
    labels: &[u8],
    folds: &[Vec<usize>],
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<CvReport, TrainError> {
    let val_share = config.split.val / (config.split.train + config.split.val);
    let jobs: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..folds.len()).map(move |f| (r, f)))
        .collect();
    let per_fold = jobs
        .par_iter()
        .map(|&(repeat, fold)| -> Result<FoldResult, TrainError> {
            let test = &folds[fold];
            let rest: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != fold)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[12, repeat as u64, fold as u64]));
            let (train_idx, val_idx) = split_off(&rest, labels, val_share, &mut rng);
            let run_config = TrainConfig {
                seed: derive_seed(config.seed, &[13, repeat as u64, fold as u64]),
                ..config.clone()
            };
            let outcome = train(videos, labels, &train_idx, &val_idx, model, &run_config)?;
            let metrics = evaluate(videos, labels, test, &outcome.params, model)?;
            log::info!("repeat {repeat} fold {fold}: {}", metrics.row("test"));
            Ok(FoldResult {
                fold,
                repeat,
                metrics,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.history.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metrics: Vec<Metrics> = per_fold.iter().map(|r| r.metrics).collect();
    Ok(CvReport {
        mean: mean_metrics(&metrics),
        per_fold,
        folds: folds.to_vec(),
    })
}

/// Stratified k-fold cross-validation. Each fold serves once as the test
/// set; the rest is split into train and validation in the configured
/// train:val proportion. With `repeats > 1` the whole protocol is rerun
/// with derived seeds and all runs are averaged.
pub fn run_cv(
    videos: &[SegmentFeatures],
    labels: &[u8],
    model: &ModelConfig,
    config: &TrainConfig,
    k: usize,
) -> Result<CvReport, TrainError> {
    config.validate()?;
    model.validate()?;
    if videos.len() != labels.len() {
        return Err(TrainError::Config(format!(
            "{} videos but {} labels",
            videos.len(),
            labels.len()
        )));
    }
    if config.split.train + config.split.val <= 0.0 {
        return Err(TrainError::Config("train + val fractions must be positive".into()));
    }
    let folds = stratified_kfold(labels, k, config.seed)?;
    cv_on_folds(videos, labels, &folds, model, config)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub ablation: Ablation,
    pub report: CvReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let rows: Vec<(String, Metrics)> = self.rows.iter().map(|r| (r.label.clone(), r.report.mean)).collect();
        format_table(&rows)
    }

    pub fn get(&self, ablation: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == ablation)
    }
}

/// Cross-validates every ablation variant on one shared set of folds and
/// training seeds.
pub fn run_ablation(
    videos: &[SegmentFeatures],
    labels: &[u8],
    base: &ModelConfig,
    config: &TrainConfig,
    k: usize,
) -> Result<AblationReport, TrainError> {
    config.validate()?;
    let folds = stratified_kfold(labels, k, config.seed)?;
    let rows = Ablation::ALL
        .par_iter()
        .map(|&ablation| -> Result<AblationRow, TrainError> {
            let model = ModelConfig { ablation, ..base.clone() };
            model.validate()?;
            Ok(AblationRow {
                label: ablation.label().to_string(),
                ablation,
                report: cv_on_folds(videos, labels, &folds, &model, config)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = AblationReport { rows };
    if let (Some(full), Some(none)) = (report.get(Ablation::Full), report.get(Ablation::NoGraph)) {
        if full.report.mean.accuracy < none.report.mean.accuracy {
            log::warn!(
                "full model accuracy {:.3} is below the no-graph baseline {:.3}",
                full.report.mean.accuracy,
                none.report.mean.accuracy
            );
        }
    }
    Ok(report)
}
