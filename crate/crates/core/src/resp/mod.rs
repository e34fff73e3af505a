//! RESP2 wire protocol: codec, client-side [`Store`](crate::store::Store)
//! and a small in-process server.

mod client;
mod frame;
mod server;

pub use client::{redis_address, ClientConnection, RespStore};
pub use frame::{
    decode_frame, encode_command, encode_frame, encode_into, ProtocolError, RespFrame, MAX_ARRAY_LEN, MAX_BULK_LEN,
    MAX_DEPTH, MAX_LINE_LEN,
};
pub use server::{RespServer, ServerHandle, DEFAULT_ADDR};
