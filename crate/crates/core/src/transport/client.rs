//! The client process: join, receive a shard assignment, then train and
//! report every round until SHUTDOWN.

use std::io::Write;
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{encode_frame, FrameReader, JoinAck, Message, ShardAssignment};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Dims, ParamSet};
use crate::orchestrator::{build_client_state, client_round, load_source, RoundClientMetrics};

/// One round as seen from the client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundOutcome {
    pub round: u32,
    pub metrics: RoundClientMetrics,
}

/// What a client did during one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRunSummary {
    pub client_id: u32,
    pub rounds: Vec<ClientRoundOutcome>,
}

/// Bounded reconnect: one immediate attempt, then retries after 1 s, 2 s,
/// and 4 s before giving up.
fn connect_with_retry(addr: &str) -> Result<TcpStream> {
    let backoffs = [1u64, 2, 4];
    let mut last_err: Option<std::io::Error> = None;
    for attempt in 0..=backoffs.len() {
        if attempt > 0 {
            let wait = backoffs[attempt - 1];
            log::warn!("connect to {addr} failed, retrying in {wait} s");
            std::thread::sleep(Duration::from_secs(wait));
        }
        match TcpStream::connect(addr) {
            Ok(stream) => return Ok(stream),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Protocol(format!(
        "could not connect to {addr} after {} attempts: {}",
        backoffs.len() + 1,
        last_err.expect("at least one attempt")
    )))
}

/// Rebuild the local shard from the JOIN_ACK assignment.
fn materialize_shard(ack: &JoinAck, config: &ExperimentConfig) -> Result<Dataset> {
    match &ack.shard {
        ShardAssignment::Data {
            x,
            y,
            n_features,
            n_classes,
        } => {
            let d = *n_features as usize;
            let n = y.len();
            if x.len() != n * d {
                return Err(Error::Protocol(format!(
                    "shard data has {} values for {n} rows x {d} columns",
                    x.len()
                )));
            }
            let features =
                ndarray::Array2::from_shape_vec((n, d), x.clone()).expect("length checked");
            let labels = y.iter().map(|&l| l as usize).collect();
            let names = (0..d).map(|i| format!("f{i}")).collect();
            Dataset::new(features, labels, *n_classes as usize, names)
        }
        ShardAssignment::Indices(indices) => {
            let (full, _) = load_source(config)?;
            let rows: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
            if let Some(&bad) = rows.iter().find(|&&r| r >= full.n_samples()) {
                return Err(Error::Protocol(format!(
                    "shard index {bad} out of range for local dataset of {} rows",
                    full.n_samples()
                )));
            }
            match &ack.standardizer {
                None => full.select(&rows),
                Some(standardizer) => {
                    let mut x = full.features().select(ndarray::Axis(0), &rows);
                    standardizer.apply(&mut x)?;
                    let labels = rows.iter().map(|&r| full.labels()[r]).collect();
                    Dataset::new(x, labels, full.n_classes(), full.feature_names().to_vec())
                }
            }
        }
    }
}

fn run_session(
    addr: &str,
    client_id: u32,
    local_config: &ExperimentConfig,
) -> Result<ClientRunSummary> {
    let stream = connect_with_retry(addr)?;
    stream.set_nodelay(true).ok();
    let mut writer = stream.try_clone()?;
    let mut reader = FrameReader::new(stream);

    writer.write_all(&encode_frame(&Message::Join { client_id })?)?;
    let ack = match reader.next_message()? {
        Some(Message::JoinAck(ack)) => ack,
        Some(Message::Error { message }) => {
            return Err(Error::Protocol(format!("server refused join: {message}")))
        }
        Some(other) => return Err(Error::Protocol(format!("expected JOIN_ACK, got {other:?}"))),
        None => {
            return Err(Error::Protocol(
                "server closed connection during join".into(),
            ))
        }
    };
    if ack.client_id != client_id {
        return Err(Error::Protocol(format!(
            "JOIN_ACK addressed to client {} instead of {client_id}",
            ack.client_id
        )));
    }

    // The server's config echo drives everything; only local file paths
    // (each machine holds its own copy of the data) come from this side.
    let mut config = ack.config.clone();
    if local_config.data.csv_path.is_some() {
        config.data.csv_path = local_config.data.csv_path.clone();
    }
    if local_config.data.cache_path.is_some() {
        config.data.cache_path = local_config.data.cache_path.clone();
    }

    let shard = materialize_shard(&ack, &config)?;
    let dims = Dims::new(shard.n_features(), config.model.hidden, shard.n_classes())?;
    let mut state = build_client_state(&config, client_id, shard, dims)?;
    log::info!(
        "client {client_id}: {} train rows, {} eval rows",
        state.local_train.n_samples(),
        state.local_eval.n_samples()
    );

    let mut summary = ClientRunSummary {
        client_id,
        rounds: Vec::new(),
    };
    loop {
        match reader.next_message()? {
            Some(Message::GlobalModel { round, params, .. }) => {
                let global = ParamSet::from_flat(&params, dims)?;
                let (update, metrics) = client_round(&mut state, &global, &config, round)?;
                writer.write_all(&encode_frame(&Message::ClientUpdate {
                    round,
                    params: update.params,
                    n_samples: update.n_samples,
                    client_id,
                })?)?;
                writer.write_all(&encode_frame(&Message::RoundMetrics(
                    super::wire::RoundMetricsMsg {
                        round,
                        metrics: metrics.clone(),
                    },
                ))?)?;
                log::info!(
                    "client {client_id} round {round}: eval accuracy {:.4}",
                    metrics.eval_accuracy
                );
                summary.rounds.push(ClientRoundOutcome { round, metrics });
            }
            Some(Message::Shutdown) => return Ok(summary),
            Some(Message::Error { message }) => {
                return Err(Error::Protocol(format!("server error: {message}")))
            }
            Some(other) => return Err(Error::Protocol(format!("unexpected message {other:?}"))),
            None => return Err(Error::Protocol("server closed connection".into())),
        }
    }
}

/// Join `server_addr` as `client_id` and participate until SHUTDOWN.
///
/// A connection lost mid-run triggers one reconnect cycle (bounded retries
/// with backoff); the rejoin is refused by the server, so the call still
/// ends in an error and the caller exits nonzero.
pub fn client_loop(
    server_addr: &str,
    client_id: u32,
    local_config: &ExperimentConfig,
) -> Result<ClientRunSummary> {
    match run_session(server_addr, client_id, local_config) {
        Ok(summary) => Ok(summary),
        Err(Error::Io(e)) => {
            log::warn!("client {client_id}: connection lost ({e}); attempting to rejoin");
            run_session(server_addr, client_id, local_config)
        }
        Err(e) => Err(e),
    }
}
