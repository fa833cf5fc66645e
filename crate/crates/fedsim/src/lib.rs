//! # fedsim
//!
//! A self-contained federated-learning simulator. It generates a
//! heterogeneous synthetic benchmark of keyed per-device classification
//! tasks, trains federated pipelines over it (FedAvg, federated minibatch
//! SGD, Reptile meta-learning, purely local models, a global IID baseline)
//! and evaluates them with distribution-aware statistical metrics and
//! systems-cost accounting (FLOPs, bytes up/down, budget to an accuracy
//! threshold).
//!
//! Everything is deterministic: every stochastic step draws from a stream
//! derived from the master seed and a context label, so results are
//! byte-identical across runs and across worker-thread counts.
//!
//! The crate is organized around six modules:
//!
//! - [`synthgen`] — the synthetic heterogeneous task generator
//! - [`dataset`] — keyed dataset store, file format and partition ops
//! - [`model`] — native linear / one-hidden-layer classifiers with exact
//!   gradients and a documented FLOP counting model
//! - [`fedalgo`] — round-based federated training engines and baselines
//! - [`metrics`] — percentile summaries, stratified accuracy, systems
//!   budgets
//! - [`runner`] — config-driven experiment orchestration and logging
//!
//! The `examples/` directory has one runnable example per capability;
//! the `fedsim` binary exposes the same operations as subcommands.

pub mod dataset;
pub mod error;
pub mod fedalgo;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod synthgen;

pub use dataset::{FederatedDataset, Sample, SplitDataset};
pub use error::{Error, Result};
pub use fedalgo::{FedConfig, FedState, RoundLog};
pub use metrics::{AccuracySummary, DeviceAccuracy, SystemsBudget, Weighting};
pub use model::{ModelKind, ModelSpec, ParamBlock};
pub use runner::{ExperimentConfig, ExperimentRecord, RecordLine};
pub use synthgen::SynthConfig;
