//! Adversarial-training lab: reverse-mode MLP engine, l-infinity adversaries,
//! dynamic batch-replay schedules and instrumented training strategies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod engine;
pub mod harness;
pub mod error;
pub mod scheduler;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
