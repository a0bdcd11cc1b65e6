//! Desk-scale federated learning and federated unlearning simulator with a
//! label-inference attack pipeline.
//!
//! The crate simulates FedAvg training over seeded synthetic (or IDX-format)
//! datasets, executes sample-, class-, and client-level unlearning requests
//! under three strategies, and runs a four-step attack that infers the labels
//! of the forgotten data from the parameter changes the unlearning left
//! behind: parameter deltas, learning-rate estimation, gradient-difference
//! reconstruction, and Z-score label selection.
//!
//! Everything is deterministic given a seed: datasets, partitions, training
//! batch order, unlearning, attack reports, and experiment aggregates. The
//! `parallel` feature (on by default) runs independent trials and per-round
//! client updates on a rayon pool; results are identical to the sequential
//! fallback.

pub mod attack;
pub mod canon;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod model;
pub mod seed;
pub mod storage;
pub mod unlearning;

pub use error::{Error, Result};
