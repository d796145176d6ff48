//! Deterministic simulator for convolutional spiking neural networks
//! trained with a combined pair-based and power-law STDP rule.
//!
//! The crate is organized bottom-up: `sim` holds the clock and LIF neuron,
//! `plasticity` the learning rules, `encoding` the Poisson front end,
//! `topology` the network shapes and weight stores, `forward` the per-step
//! layer dynamics, and `training` the full pipeline. `config`, `data`,
//! `snapshot` and `report` cover the run artifacts.

pub mod config;
pub mod data;
pub mod encoding;
pub mod error;
pub mod forward;
pub mod plasticity;
pub mod report;
pub mod rng;
pub mod sim;
pub mod snapshot;
pub mod topology;
pub mod training;

pub use error::{CsnnError, Result};
