//! Dataset ingestion, preprocessing, splitting, client partitioning, and
//! synthetic data generation.

mod cache;
mod csv_table;
mod partition;
mod split;
mod synthetic;

pub use cache::{load_cache, save_cache, CACHE_MAGIC, CACHE_VERSION};
pub use csv_table::{encode_table, preprocess, EncodedTable, RawTable, Standardizer};
pub use partition::{partition, PartitionMethod, PartitionPlan};
pub use split::{split, split_indices};
pub use synthetic::make_synthetic;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A preprocessed classification dataset: finite 64-bit features plus
/// integer class labels in `[0, n_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<usize>,
    n_classes: usize,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Checked constructor enforcing the type invariants.
    pub fn new(
        x: Array2<f64>,
        y: Vec<usize>,
        n_classes: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names vs {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        if let Some(bad) = y.iter().find(|&&label| label >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label: *bad,
                classes: n_classes,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            x,
            y,
            n_classes,
            feature_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples() == 0
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Copy of the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::InvalidArg(format!(
                "row index {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        let x = self.x.select(ndarray::Axis(0), indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Dataset::new(x, y, self.n_classes, self.feature_names.clone())
    }

    /// Same features with replacement labels (used by the poisoning attack).
    pub fn with_labels(&self, y: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.x.clone(),
            y,
            self.n_classes,
            self.feature_names.clone(),
        )
    }

    /// Number of samples per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &label in &self.y {
            counts[label] += 1;
        }
        counts
    }
}
