//! Typed messages over the raw framing.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::frame::{decode_raw, encode_raw, RawFrame, PROTOCOL_VERSION};
use crate::config::ExperimentConfig;
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::orchestrator::RoundClientMetrics;

/// Message type ids on the wire.
pub mod msg_type {
    pub const JOIN: u16 = 1;
    pub const JOIN_ACK: u16 = 2;
    pub const GLOBAL_MODEL: u16 = 3;
    pub const CLIENT_UPDATE: u16 = 4;
    pub const ROUND_METRICS: u16 = 5;
    pub const SHUTDOWN: u16 = 6;
    pub const ERROR: u16 = 7;
}

/// How a client obtains its shard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShardAssignment {
    /// Row indices into the client's local copy of the source dataset.
    Indices(Vec<u64>),
    /// The shard rows themselves (when `transport.ship_data` is set).
    Data {
        x: Vec<f64>,
        y: Vec<u32>,
        n_features: u64,
        n_classes: u32,
    },
}

/// Everything a client needs to reproduce its local state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinAck {
    pub client_id: u32,
    pub n_clients: u32,
    pub config: ExperimentConfig,
    pub shard: ShardAssignment,
    /// Train-split feature statistics; present for CSV sources shipped as
    /// indices.
    pub standardizer: Option<Standardizer>,
}

/// A client's pre-training metrics for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetricsMsg {
    pub round: u32,
    pub metrics: RoundClientMetrics,
}

/// All protocol messages.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Join {
        client_id: u32,
    },
    JoinAck(Box<JoinAck>),
    GlobalModel {
        round: u32,
        params: Vec<f64>,
        client_id: u32,
    },
    ClientUpdate {
        round: u32,
        params: Vec<f64>,
        n_samples: u64,
        client_id: u32,
    },
    RoundMetrics(RoundMetricsMsg),
    Shutdown,
    Error {
        message: String,
    },
}

fn model_payload(round: u32, params: &[f64], n_samples: Option<u64>, client_id: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.len() * 8 + 12);
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(n) = n_samples {
        out.extend_from_slice(&n.to_le_bytes());
    }
    out.extend_from_slice(&client_id.to_le_bytes());
    out
}

struct PayloadCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadCursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Protocol(format!(
                "payload too short: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("length 4"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("length 8"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("length 8"),
        ))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn parse_model_payload(
    payload: &[u8],
    with_n_samples: bool,
) -> Result<(u32, Vec<f64>, Option<u64>, u32)> {
    let mut cursor = PayloadCursor::new(payload);
    let round = cursor.u32()?;
    let count = cursor.u64()? as usize;
    // Bound the claimed count by what the frame actually carries before
    // reserving anything.
    if count
        .checked_mul(8)
        .is_none_or(|bytes| bytes > payload.len())
    {
        return Err(Error::Protocol(format!(
            "param_count {count} exceeds the {}-byte payload",
            payload.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let v = cursor.f64()?;
        if !v.is_finite() {
            return Err(Error::Protocol("non-finite parameter on the wire".into()));
        }
        params.push(v);
    }
    let n_samples = if with_n_samples {
        Some(cursor.u64()?)
    } else {
        None
    };
    let client_id = cursor.u32()?;
    cursor.finish()?;
    Ok((round, params, n_samples, client_id))
}

fn json_payload<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Protocol(format!("encoding payload: {e}")))
}

fn parse_json<T: for<'de> Deserialize<'de>>(payload: &[u8], what: &str) -> Result<T> {
    serde_json::from_slice(payload)
        .map_err(|e| Error::Protocol(format!("decoding {what} payload: {e}")))
}

/// Serialize a message to one complete frame.
pub fn encode_frame(message: &Message) -> Result<Vec<u8>> {
    let (ty, payload) = match message {
        Message::Join { client_id } => (msg_type::JOIN, client_id.to_le_bytes().to_vec()),
        Message::JoinAck(ack) => (msg_type::JOIN_ACK, json_payload(ack)?),
        Message::GlobalModel {
            round,
            params,
            client_id,
        } => (
            msg_type::GLOBAL_MODEL,
            model_payload(*round, params, None, *client_id),
        ),
        Message::ClientUpdate {
            round,
            params,
            n_samples,
            client_id,
        } => (
            msg_type::CLIENT_UPDATE,
            model_payload(*round, params, Some(*n_samples), *client_id),
        ),
        Message::RoundMetrics(metrics) => (msg_type::ROUND_METRICS, json_payload(metrics)?),
        Message::Shutdown => (msg_type::SHUTDOWN, Vec::new()),
        Message::Error { message } => (msg_type::ERROR, message.as_bytes().to_vec()),
    };
    if payload.len() as u64 > super::frame::MAX_PAYLOAD_LEN as u64 {
        return Err(Error::Protocol(format!(
            "{}-byte payload exceeds the cap",
            payload.len()
        )));
    }
    Ok(encode_raw(PROTOCOL_VERSION, ty, &payload))
}

/// Decode one message from the front of `buf`.
///
/// `Ok(None)` means the buffer holds a truncated frame. A well-framed but
/// unknown msg_type comes back as [`Error::UnknownMessageType`] carrying
/// the frame length, so the caller can skip it and keep the connection.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>> {
    let Some((frame, used)) = decode_raw(buf)? else {
        return Ok(None);
    };
    let message = parse_frame(&frame, used)?;
    Ok(Some((message, used)))
}

fn parse_frame(frame: &RawFrame, frame_len: usize) -> Result<Message> {
    if frame.version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!(
            "protocol version mismatch: peer speaks {}, this build speaks {PROTOCOL_VERSION}",
            frame.version
        )));
    }
    let payload = &frame.payload;
    match frame.msg_type {
        msg_type::JOIN => {
            let mut cursor = PayloadCursor::new(payload);
            let client_id = cursor.u32()?;
            cursor.finish()?;
            Ok(Message::Join { client_id })
        }
        msg_type::JOIN_ACK => Ok(Message::JoinAck(Box::new(parse_json(payload, "JOIN_ACK")?))),
        msg_type::GLOBAL_MODEL => {
            let (round, params, _, client_id) = parse_model_payload(payload, false)?;
            Ok(Message::GlobalModel {
                round,
                params,
                client_id,
            })
        }
        msg_type::CLIENT_UPDATE => {
            let (round, params, n_samples, client_id) = parse_model_payload(payload, true)?;
            Ok(Message::ClientUpdate {
                round,
                params,
                n_samples: n_samples.expect("requested"),
                client_id,
            })
        }
        msg_type::ROUND_METRICS => Ok(Message::RoundMetrics(parse_json(payload, "ROUND_METRICS")?)),
        msg_type::SHUTDOWN => {
            if !payload.is_empty() {
                return Err(Error::Protocol("SHUTDOWN carries no payload".into()));
            }
            Ok(Message::Shutdown)
        }
        msg_type::ERROR => Ok(Message::Error {
            message: String::from_utf8_lossy(payload).into_owned(),
        }),
        other => Err(Error::UnknownMessageType {
            msg_type: other,
            frame_len,
        }),
    }
}

/// Buffered frame reader over a byte stream.
pub struct FrameReader<R: Read> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
        }
    }

    /// Next message, blocking. `Ok(None)` is a clean end-of-stream at a
    /// frame boundary. An unknown-type frame is consumed before the error
    /// returns, so the stream stays usable.
    pub fn next_message(&mut self) -> Result<Option<Message>> {
        loop {
            match decode_frame(&self.buf) {
                Ok(Some((message, used))) => {
                    self.buf.drain(..used);
                    return Ok(Some(message));
                }
                Ok(None) => {}
                Err(Error::UnknownMessageType {
                    msg_type,
                    frame_len,
                }) => {
                    self.buf.drain(..frame_len);
                    return Err(Error::UnknownMessageType {
                        msg_type,
                        frame_len,
                    });
                }
                Err(e) => return Err(e),
            }
            let mut chunk = [0u8; 16 * 1024];
            let n = self.inner.read(&mut chunk)?;
            if n == 0 {
                if self.buf.is_empty() {
                    return Ok(None);
                }
                return Err(Error::Protocol("connection closed mid-frame".into()));
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_trip(message: Message) {
        let bytes = encode_frame(&message).unwrap();
        let (back, used) = decode_frame(&bytes).unwrap().unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, message);
    }

    #[test]
    fn every_message_type_round_trips() {
        round_trip(Message::Join { client_id: 3 });
        round_trip(Message::JoinAck(Box::new(JoinAck {
            client_id: 1,
            n_clients: 5,
            config: ExperimentConfig::default(),
            shard: ShardAssignment::Indices(vec![0, 5, 9]),
            standardizer: Some(Standardizer {
                means: vec![0.5, -0.25],
                stds: vec![1.0, 2.0],
            }),
        })));
        round_trip(Message::GlobalModel {
            round: 7,
            params: vec![1.5, -2.25, 0.0009765625],
            client_id: 2,
        });
        round_trip(Message::ClientUpdate {
            round: 7,
            params: vec![0.1, 0.2],
            n_samples: 420,
            client_id: 0,
        });
        round_trip(Message::RoundMetrics(RoundMetricsMsg {
            round: 2,
            metrics: RoundClientMetrics {
                client_id: 4,
                eval_loss: 0.731,
                eval_accuracy: 0.5,
                eval_f1: 0.25,
                n_samples: 100,
                epochs_run: 12,
            },
        }));
        round_trip(Message::Shutdown);
        round_trip(Message::Error {
            message: "nope".into(),
        });
    }

    #[test]
    fn hundred_parameter_model_round_trips_bit_exactly() {
        let params: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 1e3).collect();
        let message = Message::GlobalModel {
            round: 1,
            params: params.clone(),
            client_id: 0,
        };
        let bytes = encode_frame(&message).unwrap();
        let (back, _) = decode_frame(&bytes).unwrap().unwrap();
        match back {
            Message::GlobalModel {
                params: decoded, ..
            } => {
                assert_eq!(decoded.len(), 100);
                for (a, b) in decoded.iter().zip(&params) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("wrong message {other:?}"),
        }
    }

    #[test]
    fn unknown_message_type_reports_frame_length() {
        let bytes = encode_raw(PROTOCOL_VERSION, 99, &[1, 2, 3]);
        match decode_frame(&bytes) {
            Err(Error::UnknownMessageType {
                msg_type,
                frame_len,
            }) => {
                assert_eq!(msg_type, 99);
                assert_eq!(frame_len, bytes.len());
            }
            other => panic!("expected UnknownMessageType, got {other:?}"),
        }
    }

    #[test]
    fn inflated_param_count_is_rejected_without_allocating() {
        // round + a count far beyond the payload, no float data.
        let mut payload = 1u32.to_le_bytes().to_vec();
        payload.extend_from_slice(&(u64::MAX / 2).to_le_bytes());
        let bytes = encode_raw(PROTOCOL_VERSION, msg_type::GLOBAL_MODEL, &payload);
        assert!(matches!(decode_frame(&bytes), Err(Error::Protocol(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let bytes = encode_raw(2, msg_type::SHUTDOWN, &[]);
        assert!(matches!(decode_frame(&bytes), Err(Error::Protocol(_))));
    }

    #[test]
    fn reader_survives_unknown_frames() {
        let mut stream = encode_raw(PROTOCOL_VERSION, 42, &[0; 8]);
        stream.extend_from_slice(&encode_frame(&Message::Shutdown).unwrap());
        let mut reader = FrameReader::new(stream.as_slice());
        assert!(matches!(
            reader.next_message(),
            Err(Error::UnknownMessageType { msg_type: 42, .. })
        ));
        assert_eq!(reader.next_message().unwrap(), Some(Message::Shutdown));
        assert_eq!(reader.next_message().unwrap(), None);
    }

    #[test]
    fn reader_rejects_eof_mid_frame() {
        let bytes = encode_frame(&Message::Join { client_id: 1 }).unwrap();
        let mut reader = FrameReader::new(&bytes[..bytes.len() - 1]);
        assert!(reader.next_message().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn codec_round_trips_random_updates(
            round in 0u32..1000,
            client_id in 0u32..64,
            n_samples in 1u64..100_000,
            params in proptest::collection::vec(-1e6f64..1e6, 0..200),
        ) {
            let message = Message::ClientUpdate { round, params, n_samples, client_id };
            let bytes = encode_frame(&message).unwrap();
            let (back, used) = decode_frame(&bytes).unwrap().unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, message);
        }

        #[test]
        fn decoder_consumes_exactly_one_frame(
            params_a in proptest::collection::vec(-10.0f64..10.0, 0..50),
            message_b in "[a-z]{0,20}",
        ) {
            let first = encode_frame(&Message::GlobalModel {
                round: 1, params: params_a, client_id: 9,
            }).unwrap();
            let second = encode_frame(&Message::Error { message: message_b }).unwrap();
            let mut buf = first.clone();
            buf.extend_from_slice(&second);
            let (_, used) = decode_frame(&buf).unwrap().unwrap();
            prop_assert_eq!(used, first.len());
            let (msg2, used2) = decode_frame(&buf[used..]).unwrap().unwrap();
            prop_assert_eq!(used2, second.len());
            let is_error = matches!(msg2, Message::Error { .. });
            prop_assert!(is_error);
        }
    }
}
