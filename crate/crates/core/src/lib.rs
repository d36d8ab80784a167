//! Deterministic federated-learning simulator for fairness-aware training and
//! fairness attacks on it.
//!
//! Clients train a logistic (or one-hidden-layer) model on local shards, with
//! optional local debiasing ([`local`]); the server combines updates with a
//! fairness-aware or Byzantine-robust rule ([`aggregation`]). [`attack`]
//! holds the adversary that fine-tunes toward unfairness and replaces the
//! global model, and [`simulator`] runs the rounds.

pub mod aggregation;
pub mod attack;
pub mod data;
pub mod error;
pub mod fairness;
pub mod local;
pub mod model;
pub mod results;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
