//! Trainability diagnostics for continually trained neural networks.
//!
//! The crate estimates Optimization Readiness (gradient strength times
//! gradient reliability) and the k-step gain it is meant to predict, computes
//! the usual structural baselines (representation ranks, eNTK rank, Hessian
//! rank, active-neuron fraction), and numerically certifies the two-layer
//! counterexamples where rank diagnostics look healthy but gradient descent
//! is stuck.

pub mod cli;
pub mod counterexamples;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod gain;
pub mod linalg;
pub mod net;
pub mod seeds;
pub mod tasks;

pub use data::Dataset;
pub use error::{Error, Result};
pub use linalg::{Matrix, SpectralSummary, SpectrumKind};
pub use net::{Checkpoint, CheckpointMeta, LossKind, MlpSpec};
