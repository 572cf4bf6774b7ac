//! Length-prefixed TCP protocol for shipping MONO1 packets, plus a lossy
//! in-process channel for tests.
//!
//! Every frame is `len u32 LE | opcode u8 | payload` with `len` counting
//! the opcode and payload. A client opens with HELLO, asks for a manifest
//! (name, version, size, SHA-256) and then for the packet itself.

mod channel;
mod client;
mod frame;
mod protocol;
mod server;
mod store;

pub use channel::{simulate_channel, Delivery, SimulatedChannel};
pub use client::{fetch, Client, Fetched, WireStats};
pub use frame::{parse_frame, read_frame, write_frame, Frame, Opcode, MAX_FRAME};
pub use protocol::{
    error_frame, parse_error, Manifest, ModelRequest, ERR_BAD_REQUEST, ERR_UNEXPECTED_OPCODE, ERR_UNKNOWN_MODEL,
    ERR_UNKNOWN_VERSION, ERR_UNSUPPORTED_PROTOCOL, PROTOCOL_VERSION,
};
pub use server::{serve, ConnectionStats, Server, ServerStats};
pub use store::{packet_file_name, sha256, ModelStore, StoredModel, PACKET_EXTENSION};
