//! Deterministic desk-scale simulator for one-round federated distillation.
//!
//! The crate implements three protocols — DL-SH (confidence-weighted
//! distillation under statistical heterogeneity), DL-MH (fully heterogeneous
//! client models via label mapping/masking) and I-DL-MH (incentive
//! distillation back to the clients) — together with a FedAvg baseline and an
//! exact communication-cost accountant. Every run is a pure function of its
//! configuration: all randomness is derived from a single master seed.

pub mod commcost;
pub mod config;
pub mod data;
pub mod dlmh;
pub mod dlsh;
pub mod error;
pub mod fedavg;
pub mod harness;
pub mod idlmh;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
