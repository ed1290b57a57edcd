//! Analytical cost model and serving simulator for LLaMA-style decoder
//! inference.
//!
//! - [`arch`]: model dimensions and workload points
//! - [`costmodel`]: per-operation FLOPs, memory traffic and arithmetic intensity
//! - [`hardware`]: device specs and roofline classification
//! - [`estimator`]: linear step-time model, fitting and prediction
//! - [`kvsim`]: KV-cache footprint under different memory layouts
//! - [`workload`]: synthetic request traces
//! - [`servesim`]: batching and serving simulation
//! - [`report`]: tabular analysis and roofline output
//! - [`data`]: bundled reference measurements

pub mod arch;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod estimator;
pub mod hardware;
pub mod kvsim;
pub mod report;
pub mod servesim;
pub mod workload;

pub use arch::{ModelConfig, Phase, WorkloadPoint};
pub use error::{Error, Result};
