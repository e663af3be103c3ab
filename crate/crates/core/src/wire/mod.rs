//! SVBP, the Simple Variable Block Protocol: an unauthenticated TCP protocol for reading and
//! writing variable-block bytes and stepping a lockstep PLC.

mod client;
pub mod codec;
mod server;

pub use client::{Client, ClientError, DEFAULT_TIMEOUT};
pub use codec::{FrameError, Message, MsgType, Status, DEFAULT_PORT, MAX_FRAME};
pub use server::{respond, serve, ServerConfig, ServerHandle, MAX_STEP};
