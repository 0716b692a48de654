//! Live bridge: serves a frozen guidance policy to a networked fish
//! source over WebSocket JSON frames.

pub mod client;
pub mod protocol;
pub mod server;

pub use protocol::{ClientMsg, ErrorCode, ServerMsg, SessionSummary, PROTOCOL_VERSION};
pub use server::{serve, summarize, BridgeConfig, BridgeError, BridgeServer};
