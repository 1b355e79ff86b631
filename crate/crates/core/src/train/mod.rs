//! Training loop, evaluation and the cross-validation harness.

mod cv;
mod loss;
mod metrics;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use cv::{
    derive_seed, run_ablation, run_cv, stratified_kfold, stratified_split, AblationReport, AblationRow, CvReport, FoldResult,
};
pub use loss::{cross_entropy, cross_entropy_on_tape, one_hot};
pub use metrics::{format_table, mean_metrics, Metrics};
pub use optim::Optimizer;
pub use trainer::{evaluate, predict_all, train, EpochRecord, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("target {0:?} is not one-hot")]
    NotOneHot([f64; 2]),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training split holds only class {0}; both classes are required")]
    SingleClass(u8),
    #[error("{what} is empty")]
    Empty { what: &'static str },
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    TooFewPerClass { class: u8, count: usize, k: usize },
    #[error("loss diverged to {loss} at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Train / validation / test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub split: Split,
    /// Per-class loss weights `[non-hate, hate]`; plain cross-entropy when unset.
    pub class_weights: Option<[f64; 2]>,
    /// Repetitions of each CV run with shifted seeds; results are averaged.
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            split: Split::default(),
            class_weights: None,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad(format!("split fractions must lie in [0, 1], got {s:?}"));
        }
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must sum to 1, got {}", s.train + s.val + s.test));
        }
        if s.train <= 0.0 {
            return bad("train fraction must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad(format!("class weights must be finite and non-negative, got {w:?}"));
            }
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        Ok(())
    }

    pub fn class_weight(&self, label: u8) -> f64 {
        self.class_weights.map_or(1.0, |w| w[usize::from(label == 1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::default().batch_size, 8);
    }

    #[test]
    fn rejects_bad_split_and_batch() {
        let c = TrainConfig {
            split: Split { train: 0.7, val: 0.2, test: 0.2 },
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.1, "lr": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"optimizer": "sgd"}"#).unwrap();
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
    }
}
