//! Label-flipping data poisoning applied to a client's local shard.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Parameters of the label-flipping attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    /// Fraction of each targeted class's samples whose labels get redrawn.
    pub victim_fraction: f64,
    /// Classes under attack; `None` selects the 6 most frequent classes in
    /// the victim shard (ties to the lower class id).
    pub target_classes: Option<BTreeSet<usize>>,
    pub seed: u64,
    pub enabled: bool,
    /// Alternative reading: flip `victim_fraction` of the pooled targeted
    /// samples rather than per class.
    pub pooled_fraction: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            victim_fraction: 0.7,
            target_classes: None,
            seed: 0,
            enabled: false,
            pooled_fraction: false,
        }
    }
}

/// One label change, by shard row index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub index: usize,
    pub old_label: usize,
    pub new_label: usize,
}

/// The `count` most frequent classes in the shard, ties broken toward the
/// lower class id.
pub fn default_target_classes(shard: &Dataset, count: usize) -> BTreeSet<usize> {
    let counts = shard.class_counts();
    let mut order: Vec<usize> = (0..shard.n_classes()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.into_iter().take(count).collect()
}

/// Number of classes attacked when the spec leaves the target set open.
pub const DEFAULT_TARGET_CLASS_COUNT: usize = 6;

/// Flip labels in a shard per the attack spec.
///
/// For each targeted class t with n_t samples, exactly
/// round(victim_fraction * n_t) samples are chosen uniformly without
/// replacement and their labels redrawn uniformly from the other c-1
/// classes. Features are untouched. Deterministic given the spec's seed.
pub fn flip_labels(shard: &Dataset, spec: &AttackSpec) -> Result<(Dataset, Vec<FlipRecord>)> {
    if !(0.0..=1.0).contains(&spec.victim_fraction) {
        return Err(Error::InvalidArg(format!(
            "victim_fraction must be in [0,1], got {}",
            spec.victim_fraction
        )));
    }
    let c = shard.n_classes();
    let targets: BTreeSet<usize> = match &spec.target_classes {
        Some(set) => {
            if let Some(&bad) = set.iter().find(|&&t| t >= c) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: c,
                });
            }
            set.clone()
        }
        None => default_target_classes(shard, DEFAULT_TARGET_CLASS_COUNT.min(c)),
    };
    if !targets.is_empty() && c < 2 {
        return Err(Error::InvalidArg(
            "cannot flip labels with fewer than 2 classes".into(),
        ));
    }

    let mut rng = seeded_rng(spec.seed);
    let mut labels = shard.labels().to_vec();
    let mut log = Vec::new();

    fn flip_rows(
        rows: &mut [usize],
        fraction: f64,
        n_classes: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
        labels: &mut [usize],
        log: &mut Vec<FlipRecord>,
    ) {
        let n_flip = (fraction * rows.len() as f64).round() as usize;
        rows.shuffle(rng);
        let mut chosen: Vec<usize> = rows[..n_flip].to_vec();
        chosen.sort_unstable();
        for index in chosen {
            let old_label = labels[index];
            let draw = rng.random_range(0..n_classes - 1);
            let new_label = if draw >= old_label { draw + 1 } else { draw };
            labels[index] = new_label;
            log.push(FlipRecord {
                index,
                old_label,
                new_label,
            });
        }
    }

    if spec.pooled_fraction {
        let mut pool: Vec<usize> = shard
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| targets.contains(l))
            .map(|(i, _)| i)
            .collect();
        flip_rows(
            &mut pool,
            spec.victim_fraction,
            c,
            &mut rng,
            &mut labels,
            &mut log,
        );
    } else {
        // Ascending class order keeps the rng stream well-defined.
        for &target in &targets {
            let mut rows: Vec<usize> = shard
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == target)
                .map(|(i, _)| i)
                .collect();
            flip_rows(
                &mut rows,
                spec.victim_fraction,
                c,
                &mut rng,
                &mut labels,
                &mut log,
            );
        }
    }

    let poisoned = shard.with_labels(labels)?;
    Ok((poisoned, log))
}

/// Write a flip log as CSV (`index,old_label,new_label`).
pub fn write_flip_log<W: Write>(log: &[FlipRecord], mut w: W) -> Result<()> {
    writeln!(w, "index,old_label,new_label")?;
    for record in log {
        writeln!(
            w,
            "{},{},{}",
            record.index, record.old_label, record.new_label
        )?;
    }
    Ok(())
}
