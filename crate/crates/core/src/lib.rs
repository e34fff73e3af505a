//! Concurrent memoization of 3n+1 sequence lengths over a shared
//! hierarchical key-value store.
//!
//! [`store::Store`] is the backend-neutral interface; [`embedded`] and
//! [`resp`] implement it. [`collatz`] holds the memoized walk and
//! [`harness`] runs it across worker threads.

pub mod collatz;
pub mod embedded;
pub mod error;
pub mod harness;
pub mod resp;
pub mod store;

pub use error::{Error, Result};
