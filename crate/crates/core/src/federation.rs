//! Server-side aggregation rules and differential-privacy noising.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One client's post-training model, as a canonical flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub params: Vec<f64>,
    /// Local training-set size; weights FedAvg, ignored by robust rules.
    pub n_samples: u64,
}

/// Which aggregation rule the server applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    FedAvg,
    Median,
    TrimmedMean { k: usize },
    Krum { f: usize },
}

/// Validate a round's updates and return the indices in ascending
/// client_id order.
fn checked_order(updates: &[ClientUpdate]) -> Result<Vec<usize>> {
    if updates.is_empty() {
        return Err(Error::InvalidArg("no client updates to aggregate".into()));
    }
    let len = updates[0].params.len();
    for update in updates {
        if update.params.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "client {} sent {} params, expected {len}",
                update.client_id,
                update.params.len()
            )));
        }
        if update.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "update from client {}",
                update.client_id
            )));
        }
        if update.n_samples == 0 {
            return Err(Error::InvalidArg(format!(
                "client {} reports zero samples",
                update.client_id
            )));
        }
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    Ok(order)
}

/// Sample-count-weighted coordinate-wise mean, summed in ascending
/// client_id order.
///
/// Computed as baseline + weighted deviations from the first update, which
/// keeps aggregation of identical updates exactly identity.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let order = checked_order(updates)?;
    let total: u64 = updates.iter().map(|u| u.n_samples).sum();
    let base = &updates[order[0]].params;
    let mut out = base.clone();
    for &i in &order {
        let weight = updates[i].n_samples as f64 / total as f64;
        for (o, (u, b)) in out.iter_mut().zip(updates[i].params.iter().zip(base)) {
            *o += weight * (u - b);
        }
    }
    Ok(out)
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn coordinate_median(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    checked_order(updates)?;
    let len = updates[0].params.len();
    let n = updates.len();
    let mut out = Vec::with_capacity(len);
    let mut column = vec![0.0f64; n];
    for j in 0..len {
        for (slot, update) in column.iter_mut().zip(updates) {
            *slot = update.params[j];
        }
        column.sort_by(f64::total_cmp);
        let mid = n / 2;
        out.push(if n % 2 == 1 {
            column[mid]
        } else {
            (column[mid - 1] + column[mid]) / 2.0
        });
    }
    Ok(out)
}

/// Coordinate-wise mean after dropping the k smallest and k largest values.
pub fn trimmed_mean(updates: &[ClientUpdate], k: usize) -> Result<Vec<f64>> {
    checked_order(updates)?;
    let n = updates.len();
    if n <= 2 * k {
        return Err(Error::InvalidArg(format!(
            "trimmed mean needs more than 2k = {} updates, got {n}",
            2 * k
        )));
    }
    let len = updates[0].params.len();
    let mut out = Vec::with_capacity(len);
    let mut column = vec![0.0f64; n];
    for j in 0..len {
        for (slot, update) in column.iter_mut().zip(updates) {
            *slot = update.params[j];
        }
        column.sort_by(f64::total_cmp);
        let kept = &column[k..n - k];
        out.push(kept.iter().sum::<f64>() / kept.len() as f64);
    }
    Ok(out)
}

/// Result of Krum selection.
#[derive(Clone, Debug, PartialEq)]
pub struct KrumOutcome {
    pub chosen_client: u32,
    pub params: Vec<f64>,
    /// (client_id, score) in ascending client_id order.
    pub scores: Vec<(u32, f64)>,
}

/// Krum: each update scores the summed squared distances to its n-f-2
/// nearest peers; the lowest score wins, ties to the lowest client_id.
pub fn krum(updates: &[ClientUpdate], f: usize) -> Result<KrumOutcome> {
    let order = checked_order(updates)?;
    let n = updates.len();
    if n < f + 3 {
        return Err(Error::InvalidArg(format!(
            "krum needs n >= f + 3 updates, got n = {n}, f = {f}"
        )));
    }
    let neighbors = n - f - 2;

    let sq_dist =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut scores = Vec::with_capacity(n);
    for &i in &order {
        let mut dists: Vec<f64> = order
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| sq_dist(&updates[i].params, &updates[j].params))
            .collect();
        dists.sort_by(f64::total_cmp);
        let score: f64 = dists[..neighbors].iter().sum();
        scores.push((updates[i].client_id, score));
    }

    let mut best = 0usize;
    for (idx, &(_, score)) in scores.iter().enumerate() {
        if score < scores[best].1 {
            best = idx;
        }
    }
    let chosen_client = scores[best].0;
    let chosen_idx = order[best];
    Ok(KrumOutcome {
        chosen_client,
        params: updates[chosen_idx].params.clone(),
        scores,
    })
}

/// Apply the configured rule. A single update is returned unchanged by
/// every rule.
pub fn aggregate(kind: AggregatorKind, updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    if updates.len() == 1 {
        checked_order(updates)?;
        return Ok(updates[0].params.clone());
    }
    match kind {
        AggregatorKind::FedAvg => fedavg(updates),
        AggregatorKind::Median => coordinate_median(updates),
        AggregatorKind::TrimmedMean { k } => trimmed_mean(updates, k),
        AggregatorKind::Krum { f } => krum(updates, f).map(|outcome| outcome.params),
    }
}

/// Clip an update to L2 norm `clip_norm`, then add i.i.d. Gaussian noise of
/// standard deviation `sigma * clip_norm` per coordinate.
pub fn dp_noise(
    update: &[f64],
    clip_norm: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidArg(format!(
            "clip_norm must be > 0, got {clip_norm}"
        )));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidArg(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if update.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dp_noise input".into()));
    }
    let norm = update.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    };
    let mut out: Vec<f64> = update.iter().map(|v| v * scale).collect();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma * clip_norm)
            .map_err(|e| Error::InvalidArg(format!("noise distribution: {e}")))?;
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    Ok(out)
}
