//! The master-node process: accepts client joins, drives the round loop
//! over the wire, aggregates, and assembles the experiment report.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::wire::{encode_frame, FrameReader, JoinAck, Message, ShardAssignment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::federation::ClientUpdate;
use crate::model::init_params;
use crate::orchestrator::{
    aggregate_round, prepare_data, ExperimentReport, PreparedData, RoundClientMetrics, RoundRecord,
};
use crate::poisoning::{flip_labels, FlipRecord};
use crate::rng::SeedDomain;

enum Event {
    Joined {
        client_id: u32,
        writer: TcpStream,
    },
    Incoming {
        client_id: u32,
        message: Message,
    },
    /// A well-framed message of unknown type arrived; reply with ERROR.
    UnknownFrame {
        client_id: u32,
        msg_type: u16,
    },
    Disconnected {
        client_id: u32,
        reason: String,
    },
}

struct Shared {
    config: ExperimentConfig,
    prepared: PreparedData,
    joined: Mutex<BTreeMap<u32, ()>>,
    stop: AtomicBool,
}

impl Shared {
    fn build_join_ack(&self, client_id: u32) -> Result<JoinAck> {
        let shard = if self.config.transport.ship_data {
            let rows = &self.prepared.shards[client_id as usize];
            let shard = self.prepared.train.select(rows)?;
            ShardAssignment::Data {
                x: shard.features().iter().copied().collect(),
                y: shard.labels().iter().map(|&l| l as u32).collect(),
                n_features: shard.n_features() as u64,
                n_classes: shard.n_classes() as u32,
            }
        } else {
            ShardAssignment::Indices(
                self.prepared.global_shard_indices[client_id as usize]
                    .iter()
                    .map(|&i| i as u64)
                    .collect(),
            )
        };
        Ok(JoinAck {
            client_id,
            n_clients: self.config.n_clients as u32,
            config: self.config.clone(),
            shard,
            standardizer: if self.config.transport.ship_data {
                None
            } else {
                self.prepared.standardizer.clone()
            },
        })
    }
}

fn send_error(stream: &mut TcpStream, message: &str) {
    if let Ok(bytes) = encode_frame(&Message::Error {
        message: message.into(),
    }) {
        let _ = stream.write_all(&bytes);
    }
}

/// Handshake + read loop for one connection. Runs on its own thread.
fn connection_thread(mut stream: TcpStream, shared: Arc<Shared>, events: Sender<Event>) {
    let join_timeout = Duration::from_secs(shared.config.transport.join_timeout_secs);
    let _ = stream.set_read_timeout(Some(join_timeout));
    let reader_stream = match stream.try_clone() {
        Ok(s) => s,
        Err(e) => {
            log::warn!("cloning connection: {e}");
            return;
        }
    };
    let mut reader = FrameReader::new(reader_stream);

    let client_id = match reader.next_message() {
        Ok(Some(Message::Join { client_id })) => client_id,
        Ok(other) => {
            send_error(&mut stream, &format!("expected JOIN, got {other:?}"));
            return;
        }
        Err(e) => {
            send_error(&mut stream, &format!("handshake failed: {e}"));
            return;
        }
    };

    if client_id as usize >= shared.config.n_clients {
        send_error(
            &mut stream,
            &format!(
                "client_id {client_id} out of range for {} clients",
                shared.config.n_clients
            ),
        );
        return;
    }
    {
        let mut joined = shared.joined.lock().expect("registry lock");
        if joined.contains_key(&client_id) {
            drop(joined);
            log::warn!("rejecting duplicate client_id {client_id}");
            send_error(
                &mut stream,
                &format!("client_id {client_id} already joined"),
            );
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
        joined.insert(client_id, ());
    }

    let ack = match shared.build_join_ack(client_id) {
        Ok(ack) => ack,
        Err(e) => {
            send_error(&mut stream, &format!("building JOIN_ACK: {e}"));
            return;
        }
    };
    let ack_bytes = match encode_frame(&Message::JoinAck(Box::new(ack))) {
        Ok(bytes) => bytes,
        Err(e) => {
            send_error(&mut stream, &format!("encoding JOIN_ACK: {e}"));
            return;
        }
    };
    if let Err(e) = stream.write_all(&ack_bytes) {
        let _ = events.send(Event::Disconnected {
            client_id,
            reason: format!("sending JOIN_ACK: {e}"),
        });
        return;
    }

    // Joined: hand the write half to the coordinator, keep reading here.
    let _ = stream.set_read_timeout(None);
    if events
        .send(Event::Joined {
            client_id,
            writer: stream,
        })
        .is_err()
    {
        return;
    }
    loop {
        match reader.next_message() {
            Ok(Some(message)) => {
                if events.send(Event::Incoming { client_id, message }).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = events.send(Event::Disconnected {
                    client_id,
                    reason: "connection closed".into(),
                });
                return;
            }
            Err(Error::UnknownMessageType { msg_type, .. }) => {
                if events
                    .send(Event::UnknownFrame {
                        client_id,
                        msg_type,
                    })
                    .is_err()
                {
                    return;
                }
            }
            Err(e) => {
                let _ = events.send(Event::Disconnected {
                    client_id,
                    reason: e.to_string(),
                });
                return;
            }
        }
    }
}

fn acceptor_thread(listener: TcpListener, shared: Arc<Shared>, events: Sender<Event>) {
    listener.set_nonblocking(true).ok();
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                stream.set_nonblocking(false).ok();
                let shared = Arc::clone(&shared);
                let events = events.clone();
                std::thread::spawn(move || connection_thread(stream, shared, events));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                return;
            }
        }
    }
}

/// Compute the victim's flip log server-side (the same derivation the
/// victim client applies locally).
fn victim_flip_log(config: &ExperimentConfig, prepared: &PreparedData) -> Result<Vec<FlipRecord>> {
    if !config.attack.enabled {
        return Ok(Vec::new());
    }
    let victim = config.attack.victim_client as usize;
    let shard = prepared.train.select(&prepared.shards[victim])?;
    let spec = config
        .attack
        .to_spec(SeedDomain::new(config.master_seed).attack());
    Ok(flip_labels(&shard, &spec)?.1)
}

/// Bind and serve; see [`serve_on`].
pub fn serve(config: &ExperimentConfig, listen: &str) -> Result<ExperimentReport> {
    config.validate()?;
    let listener =
        TcpListener::bind(listen).map_err(|e| Error::Protocol(format!("binding {listen}: {e}")))?;
    serve_on(listener, config)
}

/// Run the experiment over the wire: accept `n_clients` JOINs, assign
/// shards, then per round broadcast the global model, await every client's
/// update and metrics, aggregate, and finally broadcast SHUTDOWN.
///
/// An aborted run (timeout, disconnect, protocol violation) still returns
/// a report, flagged incomplete at the failing round.
pub fn serve_on(listener: TcpListener, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let seeds = SeedDomain::new(config.master_seed);
    let prepared = prepare_data(config)?;
    let flip_log = victim_flip_log(config, &prepared)?;
    let dims = prepared.dims;

    let shared = Arc::new(Shared {
        config: config.clone(),
        prepared,
        joined: Mutex::new(BTreeMap::new()),
        stop: AtomicBool::new(false),
    });
    let (events_tx, events) = channel();
    {
        let shared = Arc::clone(&shared);
        let events_tx = events_tx.clone();
        std::thread::spawn(move || acceptor_thread(listener, shared, events_tx));
    }
    drop(events_tx);

    let mut writers: BTreeMap<u32, TcpStream> = BTreeMap::new();
    let mut global = init_params(dims, seeds.init())?;
    let mut rounds: Vec<RoundRecord> = Vec::new();

    let finish = |writers: &mut BTreeMap<u32, TcpStream>,
                  shared: &Shared,
                  rounds: Vec<RoundRecord>,
                  failed_round: Option<u32>,
                  global_flat: Vec<f64>| {
        // Best-effort shutdown of every client, then unblock their readers.
        let shutdown_frame = encode_frame(&Message::Shutdown).expect("static frame");
        for (_, writer) in writers.iter_mut() {
            let _ = writer.write_all(&shutdown_frame);
            let _ = writer.shutdown(Shutdown::Both);
        }
        shared.stop.store(true, Ordering::Relaxed);
        ExperimentReport {
            config: shared.config.clone(),
            rounds,
            final_global: global_flat,
            dims,
            flip_log: flip_log.clone(),
            completed: failed_round.is_none(),
            failed_round,
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    };

    // Join phase.
    let join_deadline = Instant::now() + Duration::from_secs(config.transport.join_timeout_secs);
    while writers.len() < config.n_clients {
        let remaining = join_deadline.saturating_duration_since(Instant::now());
        match events.recv_timeout(remaining) {
            Ok(Event::Joined { client_id, writer }) => {
                log::info!(
                    "client {client_id} joined ({}/{})",
                    writers.len() + 1,
                    config.n_clients
                );
                writers.insert(client_id, writer);
            }
            Ok(Event::Disconnected { client_id, reason }) => {
                log::warn!("client {client_id} lost during join phase: {reason}");
                return Ok(finish(
                    &mut writers,
                    &shared,
                    rounds,
                    Some(0),
                    global.flatten(),
                ));
            }
            Ok(_) => {}
            Err(RecvTimeoutError::Timeout) => {
                log::warn!(
                    "join phase timed out with {}/{} clients",
                    writers.len(),
                    config.n_clients
                );
                return Ok(finish(
                    &mut writers,
                    &shared,
                    rounds,
                    Some(0),
                    global.flatten(),
                ));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Protocol("acceptor thread died".into()));
            }
        }
    }

    // Round loop.
    let mut lost_clients: std::collections::BTreeSet<u32> = Default::default();
    for round in 1..=config.rounds as u32 {
        let flat = global.flatten();
        if let Some(&gone) = lost_clients.iter().next() {
            log::warn!("round {round}: client {gone} is gone; aborting");
            return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
        }
        for (&client_id, writer) in writers.iter_mut() {
            let frame = encode_frame(&Message::GlobalModel {
                round,
                params: flat.clone(),
                client_id,
            })?;
            if let Err(e) = writer.write_all(&frame) {
                log::warn!("round {round}: sending model to client {client_id} failed: {e}");
                return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
            }
        }

        let mut updates: BTreeMap<u32, ClientUpdate> = BTreeMap::new();
        let mut metrics: BTreeMap<u32, RoundClientMetrics> = BTreeMap::new();
        let deadline = Instant::now() + Duration::from_secs(config.transport.round_timeout_secs);
        while updates.len() < config.n_clients || metrics.len() < config.n_clients {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let event = match events.recv_timeout(remaining) {
                Ok(event) => event,
                Err(RecvTimeoutError::Timeout) => {
                    log::warn!(
                        "round {round} timed out with {}/{} updates",
                        updates.len(),
                        config.n_clients
                    );
                    return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("acceptor thread died".into()));
                }
            };
            match event {
                Event::Incoming {
                    client_id,
                    message:
                        Message::ClientUpdate {
                            round: r,
                            params,
                            n_samples,
                            client_id: payload_id,
                        },
                } => {
                    if r != round || payload_id != client_id {
                        log::warn!(
                            "client {client_id}: unexpected update (round {r}, payload id {payload_id})"
                        );
                        return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
                    }
                    updates.insert(
                        client_id,
                        ClientUpdate {
                            client_id,
                            params,
                            n_samples,
                        },
                    );
                }
                Event::Incoming {
                    client_id,
                    message: Message::RoundMetrics(m),
                } => {
                    if m.round != round || m.metrics.client_id != client_id {
                        log::warn!("client {client_id}: metrics for wrong round {}", m.round);
                        return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
                    }
                    metrics.insert(client_id, m.metrics);
                }
                Event::Incoming { client_id, message } => {
                    log::warn!("client {client_id}: unexpected message {message:?}");
                    return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
                }
                Event::UnknownFrame {
                    client_id,
                    msg_type,
                } => {
                    // The connection survives unknown message types.
                    if let Some(writer) = writers.get_mut(&client_id) {
                        send_error(writer, &format!("unknown message type {msg_type}"));
                    }
                }
                Event::Disconnected { client_id, reason } => {
                    // Fatal only if this round still needs the client; a
                    // client dying after its final submission fails the
                    // next round instead.
                    if updates.contains_key(&client_id) && metrics.contains_key(&client_id) {
                        log::warn!(
                            "client {client_id} disconnected after submitting round {round}: {reason}"
                        );
                        lost_clients.insert(client_id);
                    } else {
                        log::warn!("round {round}: client {client_id} disconnected: {reason}");
                        return Ok(finish(&mut writers, &shared, rounds, Some(round), flat));
                    }
                }
                Event::Joined { client_id, .. } => {
                    log::warn!("client {client_id} joined mid-experiment; ignoring");
                }
            }
        }

        let round_updates: Vec<ClientUpdate> = updates.into_values().collect();
        let round_metrics: Vec<RoundClientMetrics> = metrics.into_values().collect();
        let (next_global, record) = aggregate_round(
            &round_updates,
            round_metrics,
            &shared.prepared.test,
            config,
            dims,
            round,
        )?;
        log::info!(
            "round {round}: test accuracy {:.4}, test loss {:.4}",
            record.aggregate.test_accuracy,
            record.aggregate.test_loss
        );
        global = next_global;
        rounds.push(record);
    }

    let flat = global.flatten();
    Ok(finish(&mut writers, &shared, rounds, None, flat))
}
