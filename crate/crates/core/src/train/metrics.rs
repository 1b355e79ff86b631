//! Binary classification metrics with hate (label 1) as the positive class.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when `tp + fp == 0`; precision is then reported as 0.
    pub precision_undefined: bool,
    /// Set when `tp + fn == 0`; recall is then reported as 0.
    pub recall_undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let total = tp + fp + tn + fn_;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
            precision_undefined: tp + fp == 0,
            recall_undefined: tp + fn_ == 0,
        }
    }

    /// Panics if the slices differ in length.
    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Self {
        assert_eq!(predicted.len(), labels.len(), "prediction/label length mismatch");
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Table row: `name accuracy f1 precision recall`, three decimals.
    pub fn row(&self, name: &str) -> String {
        format!(
            "{name} {:.3} {:.3} {:.3} {:.3}",
            self.accuracy, self.f1, self.precision, self.recall
        )
    }
}

/// Arithmetic mean of the four rates, and of the counts (rounded down).
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    if all.is_empty() {
        return Metrics::default();
    }
    let n = all.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    let avg_count = |f: fn(&Metrics) -> usize| all.iter().map(f).sum::<usize>() / all.len();
    Metrics {
        tp: avg_count(|m| m.tp),
        fp: avg_count(|m| m.fp),
        tn: avg_count(|m| m.tn),
        fn_: avg_count(|m| m.fn_),
        accuracy: avg(|m| m.accuracy),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
        precision_undefined: all.iter().any(|m| m.precision_undefined),
        recall_undefined: all.iter().any(|m| m.recall_undefined),
    }
}

/// Aligned plain-text table in the column order accuracy, F1, precision, recall.
pub fn format_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<width$} | {:>8} | {:>8} | {:>9} | {:>6}\n",
        "Model", "Accuracy", "F1-score", "Precision", "Recall"
    );
    out.push_str(&format!("{}\n", "-".repeat(width + 44)));
    for (name, m) in rows {
        out.push_str(&format!(
            "{:<width$} | {:>8.3} | {:>8.3} | {:>9.3} | {:>6.3}\n",
            name, m.accuracy, m.f1, m.precision, m.recall
        ));
    }
    out
}
