//! Mini-batch local training with early stopping.

use ndarray::Axis;
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::net::{evaluate, loss_and_grads, ForwardMode};
use super::params::ParamSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Per-round training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Consecutive epochs without strict eval-loss improvement before
    /// training halts.
    pub patience: usize,
}

/// Eval metrics recorded after one training epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochEval {
    pub loss: f64,
    pub accuracy: f64,
}

/// What happened during one `train_local` call.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub history: Vec<EpochEval>,
    pub stopped_early: bool,
    /// 1-based epoch whose snapshot was returned; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Train a copy of `params` on `train` with Adam, evaluating on `eval`
/// after every epoch and returning the best-eval-loss snapshot.
///
/// Deterministic given all inputs and `seed`; the optimizer state persists
/// in `opt` so callers can carry it across federated rounds.
pub fn train_local(
    params: &ParamSet,
    opt: &mut AdamState,
    train: &Dataset,
    eval: &Dataset,
    schedule: &Schedule,
    dropout_rate: f64,
    seed: u64,
) -> Result<(ParamSet, TrainReport)> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if schedule.batch_size == 0 {
        return Err(Error::InvalidArg("batch_size must be >= 1".into()));
    }
    if schedule.patience == 0 {
        return Err(Error::InvalidArg("patience must be >= 1".into()));
    }

    let mut current = params.clone();
    if schedule.max_epochs == 0 {
        return Ok((
            current,
            TrainReport {
                epochs_run: 0,
                history: Vec::new(),
                stopped_early: false,
                best_epoch: 0,
            },
        ));
    }

    let mut rng = seeded_rng(seed);
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = current.clone();
    let mut since_improvement = 0usize;
    let mut stopped_early = false;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.n_samples()).collect();

    for epoch in 1..=schedule.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(schedule.batch_size) {
            let xb = train.features().select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            let (_, grads) = loss_and_grads(
                &current,
                &xb.view(),
                &yb,
                ForwardMode::Train {
                    dropout_rate,
                    rng: &mut rng,
                },
            )?;
            adam_step(opt, &mut current, &grads)?;
        }

        let result = evaluate(&current, eval)?;
        history.push(EpochEval {
            loss: result.loss,
            accuracy: result.accuracy,
        });
        if result.loss < best_loss {
            best_loss = result.loss;
            best_epoch = epoch;
            best_params = current.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if since_improvement >= schedule.patience {
            stopped_early = true;
            break;
        }
    }

    let epochs_run = history.len();
    Ok((
        best_params,
        TrainReport {
            epochs_run,
            history,
            stopped_early,
            best_epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split};
    use crate::model::{init_params, AdamHyper, Dims};

    fn blob_split(seed: u64) -> (Dataset, Dataset) {
        let ds = make_synthetic(200, 2, 2, 10.0, seed).unwrap();
        split(&ds, 0.8, seed).unwrap()
    }

    #[test]
    fn zero_epochs_returns_input_unchanged() {
        let (train, eval) = blob_split(1);
        let params = init_params(Dims::new(2, 8, 2).unwrap(), 0).unwrap();
        let mut opt = AdamState::new(params.param_count(), AdamHyper::default());
        let schedule = Schedule {
            max_epochs: 0,
            batch_size: 32,
            patience: 10,
        };
        let (out, report) =
            train_local(&params, &mut opt, &train, &eval, &schedule, 0.2, 7).unwrap();
        assert_eq!(out, params);
        assert_eq!(report.epochs_run, 0);
        assert_eq!(report.best_epoch, 0);
        assert!(!report.stopped_early);
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        // Nearest-centroid oracle first: confirms the data itself is easy.
        let (train, eval) = blob_split(3);
        let mut centroids = vec![vec![0.0f64; 2]; 2];
        let counts = train.class_counts();
        for (i, &label) in train.labels().iter().enumerate() {
            centroids[label][0] += train.features()[[i, 0]];
            centroids[label][1] += train.features()[[i, 1]];
        }
        for (k, c) in centroids.iter_mut().enumerate() {
            c[0] /= counts[k] as f64;
            c[1] /= counts[k] as f64;
        }
        let oracle_hits = (0..eval.n_samples())
            .filter(|&i| {
                let d = |k: usize| {
                    (eval.features()[[i, 0]] - centroids[k][0]).powi(2)
                        + (eval.features()[[i, 1]] - centroids[k][1]).powi(2)
                };
                (d(1) < d(0)) == (eval.labels()[i] == 1)
            })
            .count();
        assert!(oracle_hits as f64 / eval.n_samples() as f64 >= 0.95);

        let params = init_params(Dims::new(2, 8, 2).unwrap(), 0).unwrap();
        let mut opt = AdamState::new(params.param_count(), AdamHyper::default());
        let schedule = Schedule {
            max_epochs: 20,
            batch_size: 32,
            patience: 10,
        };
        let (trained, report) =
            train_local(&params, &mut opt, &train, &eval, &schedule, 0.2, 7).unwrap();
        assert!(report.epochs_run >= 1);
        let result = evaluate(&trained, &eval).unwrap();
        assert!(result.accuracy >= 0.95, "eval accuracy {}", result.accuracy);
    }

    #[test]
    fn hostile_training_stops_early_at_epoch_one() {
        // Start from a model already fit to the blobs, then train on flipped
        // labels: every epoch makes clean-eval loss worse, so epoch 1 stays
        // the best and patience exhausts.
        let (train, eval) = blob_split(5);
        let params = init_params(Dims::new(2, 8, 2).unwrap(), 0).unwrap();
        let mut opt = AdamState::new(params.param_count(), AdamHyper::default());
        let schedule = Schedule {
            max_epochs: 20,
            batch_size: 32,
            patience: 10,
        };
        let (fitted, _) = train_local(&params, &mut opt, &train, &eval, &schedule, 0.0, 7).unwrap();

        let flipped_labels: Vec<usize> = train.labels().iter().map(|&l| 1 - l).collect();
        let hostile = train.with_labels(flipped_labels).unwrap();
        let mut opt2 = AdamState::new(params.param_count(), AdamHyper::default());
        let (best, report) = train_local(
            &fitted,
            &mut opt2,
            &hostile,
            &eval,
            &Schedule {
                max_epochs: 50,
                batch_size: 32,
                patience: 5,
            },
            0.0,
            11,
        )
        .unwrap();
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.epochs_run, 6); // best at 1, then patience 5
                                          // The returned snapshot is never worse than any observed epoch.
        let returned_loss = evaluate(&best, &eval).unwrap().loss;
        for epoch in &report.history {
            assert!(returned_loss <= epoch.loss + 1e-12);
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (train, eval) = blob_split(9);
        let params = init_params(Dims::new(2, 6, 2).unwrap(), 4).unwrap();
        let schedule = Schedule {
            max_epochs: 5,
            batch_size: 16,
            patience: 3,
        };
        let mut opt_a = AdamState::new(params.param_count(), AdamHyper::default());
        let mut opt_b = AdamState::new(params.param_count(), AdamHyper::default());
        let (out_a, rep_a) =
            train_local(&params, &mut opt_a, &train, &eval, &schedule, 0.2, 42).unwrap();
        let (out_b, rep_b) =
            train_local(&params, &mut opt_b, &train, &eval, &schedule, 0.2, 42).unwrap();
        assert_eq!(out_a, out_b);
        assert_eq!(rep_a, rep_b);
        assert_eq!(opt_a, opt_b);
    }

    #[test]
    fn bad_schedule_rejected() {
        let (train, eval) = blob_split(2);
        let params = init_params(Dims::new(2, 4, 2).unwrap(), 0).unwrap();
        let mut opt = AdamState::new(params.param_count(), AdamHyper::default());
        let bad_batch = Schedule {
            max_epochs: 1,
            batch_size: 0,
            patience: 1,
        };
        assert!(train_local(&params, &mut opt, &train, &eval, &bad_batch, 0.0, 0).is_err());
        let bad_patience = Schedule {
            max_epochs: 1,
            batch_size: 8,
            patience: 0,
        };
        assert!(train_local(&params, &mut opt, &train, &eval, &bad_patience, 0.0, 0).is_err());
    }
}
