//! Wire protocol and process roles for genuinely distributed runs.
//!
//! Framing: magic `FLPB`, version u16, msg_type u16, payload_len u32,
//! payload; all integers little-endian, payloads capped at 64 MiB.
//! Model-bearing messages use a fixed binary layout (64-bit floats in
//! canonical flat order); control messages carry UTF-8 JSON.

mod client;
mod frame;
mod server;
mod wire;

pub use client::{client_loop, ClientRoundOutcome, ClientRunSummary};
pub use frame::{
    decode_raw, encode_raw, RawFrame, HEADER_LEN, MAGIC, MAX_PAYLOAD_LEN, PROTOCOL_VERSION,
};
pub use server::{serve, serve_on};
pub use wire::{
    decode_frame, encode_frame, msg_type, FrameReader, JoinAck, Message, RoundMetricsMsg,
    ShardAssignment,
};

/// Default TCP port.
pub const DEFAULT_PORT: u16 = 9099;
