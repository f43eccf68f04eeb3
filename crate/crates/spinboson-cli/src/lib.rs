//! Library surface of the experiment runner; the binary in `main.rs` is a
//! thin argument-parsing shell over these functions so the integration tests
//! can drive everything in-process.

pub mod config;
pub mod output;
pub mod runner;
