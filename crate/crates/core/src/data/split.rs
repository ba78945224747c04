//! Seeded, stratified train/test splitting.

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Stratified split of `labels` into (train, test) index sets.
///
/// Each class is split as close to `train_fraction` as rounding allows; a
/// single-sample class always lands in train. Both index lists come back in
/// ascending order. Deterministic given `seed`.
pub fn split_indices(
    labels: &[usize],
    n_classes: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArg(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    if labels.len() < 2 {
        return Err(Error::InvalidArg(format!(
            "need at least 2 samples to split, got {}",
            labels.len()
        )));
    }

    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        per_class[label].push(i);
    }

    let mut rng = seeded_rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut indices) in per_class.into_iter().enumerate() {
        let n = indices.len();
        if n == 0 {
            continue;
        }
        let n_train = if n == 1 {
            log::warn!("class {class} has a single sample; assigning it to train");
            1
        } else {
            ((train_fraction * n as f64).round() as usize).min(n)
        };
        indices.shuffle(&mut rng);
        train.extend_from_slice(&indices[..n_train]);
        test.extend_from_slice(&indices[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split of a dataset into (train, test).
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) =
        split_indices(dataset.labels(), dataset.n_classes(), train_fraction, seed)?;
    Ok((dataset.select(&train_idx)?, dataset.select(&test_idx)?))
}
