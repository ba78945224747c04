//! Classification metrics: confusion matrix, accuracy, and F1 scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// c x c count matrix; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    n_classes: usize,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.n_classes + predicted]
    }

    /// Total number of counted samples.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Correct predictions (diagonal sum).
    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|k| self.count(k, k)).sum()
    }

    /// trace / total.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Number of true samples of each class (row sums).
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n_classes)
            .map(|k| (0..self.n_classes).map(|j| self.count(k, j)).sum())
            .collect()
    }
}

/// Count predictions by (true, predicted) class pair.
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<ConfusionMatrix> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidArg(format!(
            "confusion needs equal nonempty inputs, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0u64; n_classes * n_classes];
    for (&pred, &truth) in predictions.iter().zip(labels) {
        if pred >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: pred,
                classes: n_classes,
            });
        }
        if truth >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: truth,
                classes: n_classes,
            });
        }
        counts[truth * n_classes + pred] += 1;
    }
    Ok(ConfusionMatrix { counts, n_classes })
}

/// Fraction of predictions equal to labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / predictions.len() as f64
}

/// How per-class F1 scores are combined into a single number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    /// Unweighted mean over classes. A class with zero true and zero
    /// predicted samples is skipped so small shards are not penalized for
    /// classes they never see; a class with support but P+R == 0 counts as 0.
    #[default]
    Macro,
    /// Support-weighted mean over classes that appear in the labels.
    Weighted,
}

/// Macro-averaged F1 (the default reporting metric).
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    f1_score(predictions, labels, n_classes, F1Average::Macro)
}

/// Per-class F1 combined per `average`.
pub fn f1_score(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    average: F1Average,
) -> Result<f64> {
    let cm = confusion(predictions, labels, n_classes)?;
    let row_sums = cm.row_sums();

    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for k in 0..n_classes {
        let tp = cm.count(k, k);
        let truths = row_sums[k];
        let predicted: u64 = (0..n_classes).map(|i| cm.count(i, k)).sum();
        let f1 = if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / predicted as f64;
            let recall = tp as f64 / truths as f64;
            2.0 * precision * recall / (precision + recall)
        };
        match average {
            F1Average::Macro => {
                if truths > 0 || predicted > 0 {
                    weighted_sum += f1;
                    weight_total += 1.0;
                }
            }
            F1Average::Weighted => {
                if truths > 0 {
                    weighted_sum += truths as f64 * f1;
                    weight_total += truths as f64;
                }
            }
        }
    }
    // At least one class has a true sample, so the denominator is never 0.
    Ok(weighted_sum / weight_total)
}
