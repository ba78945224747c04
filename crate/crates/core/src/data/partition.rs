//! Assigning training rows to federated clients, IID or Dirichlet-skewed.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethod {
    /// Shuffled round-robin: shard sizes differ by at most one.
    Iid,
    /// Per-class label skew: each class's rows are divided by proportions
    /// drawn from a symmetric Dirichlet(alpha, ..., alpha) over clients.
    Dirichlet { alpha: f64 },
}

/// Disjoint row-index shards covering the training set, one per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub client_shards: Vec<Vec<usize>>,
    pub method: PartitionMethod,
    pub seed: u64,
}

/// One draw from a symmetric Dirichlet via normalized Gamma(alpha, 1)
/// variates, consumed from `rng` in client order.
pub fn sample_dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArg(format!("dirichlet alpha {alpha}: {e}")))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // Gamma draws can underflow to zero for very small alpha.
        return Ok(vec![1.0 / k as f64; k]);
    }
    Ok(draws.iter().map(|g| g / total).collect())
}

/// Split `proportions` of `n` items into integer counts by largest
/// remainder, ties broken by lower index.
pub fn proportions_to_counts(proportions: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let exact = p * n as f64;
        let base = exact.floor() as usize;
        counts.push(base);
        assigned += base;
        fractions.push((i, exact - base as f64));
    }
    let mut remaining = n.saturating_sub(assigned);
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fractions {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Partition the training set into one shard per client.
///
/// The plan's indices refer to rows of `train`. Every shard comes back
/// nonempty and sorted; shards are disjoint and cover all rows.
pub fn partition(
    train: &Dataset,
    n_clients: usize,
    method: PartitionMethod,
    seed: u64,
) -> Result<PartitionPlan> {
    if n_clients < 2 {
        return Err(Error::InvalidArg(format!(
            "partition needs at least 2 clients, got {n_clients}"
        )));
    }
    if train.n_samples() < n_clients {
        return Err(Error::InvalidArg(format!(
            "{n_clients} clients exceed {} training rows",
            train.n_samples()
        )));
    }

    let mut rng = seeded_rng(seed);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    match method {
        PartitionMethod::Iid => {
            let mut indices: Vec<usize> = (0..train.n_samples()).collect();
            indices.shuffle(&mut rng);
            for (j, &row) in indices.iter().enumerate() {
                shards[j % n_clients].push(row);
            }
        }
        PartitionMethod::Dirichlet { alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "dirichlet alpha must be > 0, got {alpha}"
                )));
            }
            // Per class, in ascending class order: draw proportions, shuffle
            // the class's rows, then cut them by largest-remainder counts.
            let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); train.n_classes()];
            for (row, &label) in train.labels().iter().enumerate() {
                per_class[label].push(row);
            }
            for mut rows in per_class {
                if rows.is_empty() {
                    continue;
                }
                let proportions = sample_dirichlet(&mut rng, alpha, n_clients)?;
                rows.shuffle(&mut rng);
                let counts = proportions_to_counts(&proportions, rows.len());
                let mut offset = 0;
                for (client, &count) in counts.iter().enumerate() {
                    shards[client].extend_from_slice(&rows[offset..offset + count]);
                    offset += count;
                }
            }
        }
    }

    // Rebalance: feed empty shards one row at a time from the current
    // largest shard (ties to the lowest client id).
    loop {
        let Some(empty) = shards.iter().position(|s| s.is_empty()) else {
            break;
        };
        let largest = (0..n_clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("nonempty shard list");
        let moved = shards[largest].pop().expect("largest shard nonempty");
        shards[empty].push(moved);
    }

    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(PartitionPlan {
        client_shards: shards,
        method,
        seed,
    })
}
