//! Drives federated rounds: distribute the global model, train locally,
//! collect updates, aggregate, evaluate, record.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SourceKind};
use crate::data::{
    load_cache, make_synthetic, partition, split_indices, Dataset, RawTable, Standardizer,
};
use crate::error::{Error, Result};
use crate::federation::{aggregate, dp_noise, ClientUpdate};
use crate::metrics::f1_score;
use crate::model::{evaluate, init_params, train_local, AdamState, Dims, ParamSet, Schedule};
use crate::poisoning::{flip_labels, FlipRecord};
use crate::rng::{seeded_rng, SeedDomain};

/// The data an experiment runs on, identically derivable on server and
/// clients.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Per-client row indices into `train`.
    pub shards: Vec<Vec<usize>>,
    /// Per-client row indices into the source dataset (what the wire
    /// protocol ships when `ship_data` is off).
    pub global_shard_indices: Vec<Vec<usize>>,
    /// Train-split feature statistics; present only for CSV sources.
    pub standardizer: Option<Standardizer>,
    pub dims: Dims,
}

/// Load the configured source without any standardization applied.
/// For CSV sources the returned flag is true, meaning the caller must
/// standardize with train-split statistics.
pub fn load_source(config: &ExperimentConfig) -> Result<(Dataset, bool)> {
    let seeds = SeedDomain::new(config.master_seed);
    match config.data.source {
        SourceKind::Synthetic => {
            let synth = &config.data.synthetic;
            let dataset = make_synthetic(
                synth.n_samples,
                synth.n_features,
                synth.n_classes,
                synth.separation,
                seeds.data_gen(),
            )?;
            Ok((dataset, false))
        }
        SourceKind::Cache => {
            let path = config
                .data
                .cache_path
                .as_ref()
                .ok_or_else(|| Error::Config("cache source needs data.cache_path".into()))?;
            Ok((load_cache(path)?, false))
        }
        SourceKind::Csv => {
            let path = config
                .data
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::Config("csv source needs data.csv_path".into()))?;
            let raw = RawTable::from_path(path)?;
            let encoded = crate::data::encode_table(&raw, &config.data.label_column)?;
            let dataset = Dataset::new(
                encoded.x,
                encoded.y,
                encoded.n_classes,
                encoded.feature_names,
            )?;
            Ok((dataset, true))
        }
    }
}

/// Split, standardize (train statistics only), and partition the source.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let seeds = SeedDomain::new(config.master_seed);
    let (full, needs_standardization) = load_source(config)?;

    let (train_idx, test_idx) = split_indices(
        full.labels(),
        full.n_classes(),
        config.data.train_fraction,
        seeds.split(),
    )?;

    let (train, test, standardizer) = if needs_standardization {
        let standardizer = Standardizer::fit(full.features(), Some(&train_idx))?;
        let mut train_x = full.features().select(ndarray::Axis(0), &train_idx);
        let mut test_x = full.features().select(ndarray::Axis(0), &test_idx);
        standardizer.apply(&mut train_x)?;
        standardizer.apply(&mut test_x)?;
        let names = full.feature_names().to_vec();
        let train_y = train_idx.iter().map(|&i| full.labels()[i]).collect();
        let test_y = test_idx.iter().map(|&i| full.labels()[i]).collect();
        let train = Dataset::new(train_x, train_y, full.n_classes(), names.clone())?;
        let test = Dataset::new(test_x, test_y, full.n_classes(), names)?;
        (train, test, Some(standardizer))
    } else {
        (full.select(&train_idx)?, full.select(&test_idx)?, None)
    };

    let shards = if config.n_clients == 1 {
        vec![(0..train.n_samples()).collect::<Vec<usize>>()]
    } else {
        partition(
            &train,
            config.n_clients,
            config.data.partition_method(),
            seeds.partition(),
        )?
        .client_shards
    };
    let global_shard_indices: Vec<Vec<usize>> = shards
        .iter()
        .map(|shard| shard.iter().map(|&row| train_idx[row]).collect())
        .collect();

    let dims = Dims::new(train.n_features(), config.model.hidden, train.n_classes())?;
    Ok(PreparedData {
        train,
        test,
        shards,
        global_shard_indices,
        standardizer,
        dims,
    })
}

/// One client's local state, persistent across rounds.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: u32,
    pub local_train: Dataset,
    pub local_eval: Dataset,
    pub adam: AdamState,
    /// Nonempty only on the victim when the attack is enabled.
    pub flip_log: Vec<FlipRecord>,
}

/// Build one client's state from its shard: apply the attack when this
/// client is the victim, then hold out the local eval split.
///
/// Shared verbatim between the in-process simulation and wire-mode client
/// processes so both produce bit-identical training runs.
pub fn build_client_state(
    config: &ExperimentConfig,
    client_id: u32,
    shard: Dataset,
    dims: Dims,
) -> Result<ClientState> {
    let seeds = SeedDomain::new(config.master_seed);

    let (shard, flip_log) = if config.attack.enabled && config.attack.victim_client == client_id {
        let spec = config.attack.to_spec(seeds.attack());
        let (poisoned, log) = flip_labels(&shard, &spec)?;
        log::info!(
            "client {client_id}: poisoned shard with {} label flips",
            log.len()
        );
        (poisoned, log)
    } else {
        (shard, Vec::new())
    };

    if shard.n_samples() < 2 {
        return Err(Error::Data(format!(
            "client {client_id} shard has {} rows; need at least 2 for a local eval split",
            shard.n_samples()
        )));
    }
    let (mut train_rows, mut eval_rows) = split_indices(
        shard.labels(),
        shard.n_classes(),
        1.0 - config.training.eval_fraction,
        seeds.client_eval(client_id),
    )?;
    if eval_rows.is_empty() {
        // Tiny shard: keep the eval split nonempty by moving one row over.
        let moved = train_rows.pop().expect("shard has >= 2 rows");
        eval_rows.push(moved);
    }
    let local_train = shard.select(&train_rows)?;
    let local_eval = shard.select(&eval_rows)?;

    Ok(ClientState {
        id: client_id,
        local_train,
        local_eval,
        adam: AdamState::new(dims.param_count(), config.training.adam_hyper()),
        flip_log,
    })
}

/// Build every client for simulation mode.
pub fn build_clients(
    config: &ExperimentConfig,
    prepared: &PreparedData,
) -> Result<Vec<ClientState>> {
    prepared
        .shards
        .iter()
        .enumerate()
        .map(|(i, shard_rows)| {
            let shard = prepared.train.select(shard_rows)?;
            build_client_state(config, i as u32, shard, prepared.dims)
        })
        .collect()
}

/// Metrics one client reports for one round: the received global model
/// evaluated on its local eval split, before local training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundClientMetrics {
    pub client_id: u32,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub eval_f1: f64,
    pub n_samples: u64,
    pub epochs_run: u64,
}

/// The aggregated model's metrics on the central test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub test_f1: f64,
}

/// Everything recorded for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub clients: Vec<RoundClientMetrics>,
    pub aggregate: AggregateMetrics,
}

/// One client's work for one round: evaluate the received global model,
/// train locally (optimizer state persists in `client`), optionally noise
/// the update.
pub fn client_round(
    client: &mut ClientState,
    global: &ParamSet,
    config: &ExperimentConfig,
    round: u32,
) -> Result<(ClientUpdate, RoundClientMetrics)> {
    let seeds = SeedDomain::new(config.master_seed);

    let eval = evaluate(global, &client.local_eval)?;
    let f1 = f1_score(
        &eval.predictions,
        client.local_eval.labels(),
        client.local_eval.n_classes(),
        config.metrics.f1,
    )?;

    let schedule = Schedule {
        max_epochs: config.training.epochs_per_round,
        batch_size: config.training.batch_size,
        patience: config.training.patience,
    };
    let (trained, report) = train_local(
        global,
        &mut client.adam,
        &client.local_train,
        &client.local_eval,
        &schedule,
        config.model.dropout,
        seeds.training(client.id, round),
    )?;

    let mut params = trained.flatten();
    if config.dp.enabled {
        let mut rng = seeded_rng(seeds.dp_noise(client.id, round));
        params = dp_noise(&params, config.dp.clip_norm, config.dp.sigma, &mut rng)?;
    }

    let metrics = RoundClientMetrics {
        client_id: client.id,
        eval_loss: eval.loss,
        eval_accuracy: eval.accuracy,
        eval_f1: f1,
        n_samples: client.local_train.n_samples() as u64,
        epochs_run: report.epochs_run as u64,
    };
    let update = ClientUpdate {
        client_id: client.id,
        params,
        n_samples: client.local_train.n_samples() as u64,
    };
    Ok((update, metrics))
}

/// Aggregate a full round's updates and evaluate the result on the central
/// test split.
pub fn aggregate_round(
    updates: &[ClientUpdate],
    client_metrics: Vec<RoundClientMetrics>,
    test: &Dataset,
    config: &ExperimentConfig,
    dims: Dims,
    round: u32,
) -> Result<(ParamSet, RoundRecord)> {
    let flat = aggregate(config.aggregator.aggregator_kind(), updates)?;
    let new_global = ParamSet::from_flat(&flat, dims)?;
    let test_eval = evaluate(&new_global, test)?;
    let test_f1 = f1_score(
        &test_eval.predictions,
        test.labels(),
        test.n_classes(),
        config.metrics.f1,
    )?;
    let record = RoundRecord {
        round,
        clients: client_metrics,
        aggregate: AggregateMetrics {
            test_loss: test_eval.loss,
            test_accuracy: test_eval.accuracy,
            test_f1,
        },
    };
    Ok((new_global, record))
}

/// One simulated round over all clients, in ascending client order.
pub fn run_round(
    global: &ParamSet,
    clients: &mut [ClientState],
    test: &Dataset,
    config: &ExperimentConfig,
    round: u32,
) -> Result<(ParamSet, RoundRecord)> {
    let mut updates = Vec::with_capacity(clients.len());
    let mut client_metrics = Vec::with_capacity(clients.len());
    for client in clients.iter_mut() {
        let (update, metrics) = client_round(client, global, config, round)?;
        updates.push(update);
        client_metrics.push(metrics);
    }
    aggregate_round(
        updates.as_slice(),
        client_metrics,
        test,
        config,
        global.dims(),
        round,
    )
}

/// The full output of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    pub final_global: Vec<f64>,
    pub dims: Dims,
    pub flip_log: Vec<FlipRecord>,
    /// False when a wire-mode run aborted before finishing every round.
    pub completed: bool,
    /// Round at which a wire-mode run died, if any.
    pub failed_round: Option<u32>,
    pub wall_time_secs: f64,
}

/// Run the whole experiment in-process: load/preprocess, split, partition,
/// poison the victim shard, then `rounds` federated rounds. Fully
/// deterministic given the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let seeds = SeedDomain::new(config.master_seed);

    let prepared = prepare_data(config)?;
    let mut clients = build_clients(config, &prepared)?;
    let flip_log: Vec<FlipRecord> = clients
        .iter()
        .flat_map(|c| c.flip_log.iter().copied())
        .collect();

    let mut global = init_params(prepared.dims, seeds.init())?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds as u32 {
        let (next, record) = run_round(&global, &mut clients, &prepared.test, config, round)?;
        log::info!(
            "round {round}: test accuracy {:.4}, test loss {:.4}",
            record.aggregate.test_accuracy,
            record.aggregate.test_loss
        );
        global = next;
        rounds.push(record);
    }

    Ok(ExperimentReport {
        config: config.clone(),
        rounds,
        final_global: global.flatten(),
        dims: prepared.dims,
        flip_log,
        completed: true,
        failed_round: None,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PartitionKind, SyntheticConfig};

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.n_clients = 3;
        config.rounds = 2;
        config.master_seed = 7;
        config.data.partition = PartitionKind::Iid;
        config.data.synthetic = SyntheticConfig {
            n_samples: 240,
            n_features: 4,
            n_classes: 3,
            separation: 8.0,
        };
        config.model.hidden = 8;
        config.training.epochs_per_round = 2;
        config.training.batch_size = 16;
        config
    }

    #[test]
    fn zero_epoch_round_returns_global_unchanged() {
        let mut config = tiny_config();
        config.training.epochs_per_round = 0;
        let prepared = prepare_data(&config).unwrap();
        let mut clients = build_clients(&config, &prepared).unwrap();
        let global = init_params(prepared.dims, 1).unwrap();
        let (next, record) = run_round(&global, &mut clients, &prepared.test, &config, 1).unwrap();
        assert_eq!(next, global);
        assert!(record.clients.iter().all(|m| m.epochs_run == 0));
    }

    #[test]
    fn single_client_round_returns_its_params() {
        let mut config = tiny_config();
        config.n_clients = 1;
        let prepared = prepare_data(&config).unwrap();
        let mut clients = build_clients(&config, &prepared).unwrap();
        let global = init_params(prepared.dims, 2).unwrap();
        let (update, _) = client_round(&mut clients[0].clone(), &global, &config, 1).unwrap();
        let (next, _) = run_round(&global, &mut clients, &prepared.test, &config, 1).unwrap();
        assert_eq!(next.flatten(), update.params);
    }

    #[test]
    fn first_round_beats_untrained_baseline() {
        let mut config = tiny_config();
        config.n_clients = 5;
        config.data.synthetic.n_samples = 600;
        config.training.epochs_per_round = 3;
        let prepared = prepare_data(&config).unwrap();
        let mut clients = build_clients(&config, &prepared).unwrap();
        let global =
            init_params(prepared.dims, SeedDomain::new(config.master_seed).init()).unwrap();
        let baseline = evaluate(&global, &prepared.test).unwrap().accuracy;
        let (_, record) = run_round(&global, &mut clients, &prepared.test, &config, 1).unwrap();
        assert!(
            record.aggregate.test_accuracy > baseline,
            "round 1 accuracy {} did not beat baseline {baseline}",
            record.aggregate.test_accuracy
        );
    }

    #[test]
    fn experiment_is_deterministic() {
        let config = tiny_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.final_global, b.final_global);
        assert_eq!(a.flip_log, b.flip_log);
        assert_eq!(a.rounds.len(), config.rounds);
    }

    #[test]
    fn victim_id_is_inert_when_attack_disabled() {
        let mut config = tiny_config();
        config.attack.enabled = false;
        config.attack.victim_client = 0;
        let a = run_experiment(&config).unwrap();
        config.attack.victim_client = 2;
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.final_global, b.final_global);
    }

    #[test]
    fn conservation_of_data_up_to_flips() {
        let mut config = tiny_config();
        config.attack.enabled = true;
        config.attack.victim_client = 1;
        config.attack.target_classes = vec![0, 1];
        let prepared = prepare_data(&config).unwrap();
        let clients = build_clients(&config, &prepared).unwrap();

        // Gather (feature bits, label) multisets.
        let row_key = |ds: &Dataset, i: usize| -> (Vec<u64>, usize) {
            (
                ds.features().row(i).iter().map(|v| v.to_bits()).collect(),
                ds.labels()[i],
            )
        };
        let mut seen: Vec<(Vec<u64>, usize)> = Vec::new();
        for client in &clients {
            for i in 0..client.local_train.n_samples() {
                seen.push(row_key(&client.local_train, i));
            }
            for i in 0..client.local_eval.n_samples() {
                seen.push(row_key(&client.local_eval, i));
            }
        }
        for i in 0..prepared.test.n_samples() {
            seen.push(row_key(&prepared.test, i));
        }

        // Expected: the full source with the victim-shard flips applied.
        let (full, _) = load_source(&config).unwrap();
        let victim_shard_rows = &prepared.shards[1];
        let mut labels = full.labels().to_vec();
        let seeds = SeedDomain::new(config.master_seed);
        let victim_global: Vec<usize> = prepared.global_shard_indices[1].clone();
        let shard = prepared.train.select(victim_shard_rows).unwrap();
        let spec = config.attack.to_spec(seeds.attack());
        let (_, log) = flip_labels(&shard, &spec).unwrap();
        for record in &log {
            labels[victim_global[record.index]] = record.new_label;
        }
        let mut expected: Vec<(Vec<u64>, usize)> = (0..full.n_samples())
            .map(|i| {
                (
                    full.features().row(i).iter().map(|v| v.to_bits()).collect(),
                    labels[i],
                )
            })
            .collect();

        seen.sort();
        expected.sort();
        assert_eq!(seen, expected);
    }

    #[test]
    fn poisoned_flip_log_matches_round_records() {
        let mut config = tiny_config();
        config.attack.enabled = true;
        config.attack.victim_client = 2;
        config.attack.target_classes = vec![0, 1, 2];
        let report = run_experiment(&config).unwrap();
        assert!(!report.flip_log.is_empty());
        assert_eq!(report.rounds.len(), 2);
        for record in &report.rounds {
            assert_eq!(record.clients.len(), 3);
            for m in &record.clients {
                assert!(m.eval_loss.is_finite());
                assert!((0.0..=1.0).contains(&m.eval_accuracy));
                assert!((0.0..=1.0).contains(&m.eval_f1));
            }
        }
    }
}
