//! # fedpoison
//!
//! A federated-learning poisoning testbed: clients train a small MLP on
//! partitioned intrusion-detection-style data, a server aggregates their
//! models (FedAvg plus Byzantine-robust variants), and a designated client
//! can run a label-flipping attack. Experiments run either as a
//! deterministic in-process simulation or as real distributed processes
//! over a length-prefixed TCP protocol, producing identical metrics.

pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod poisoning;
pub mod report;
pub mod rng;
pub mod transport;

pub use config::ExperimentConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use federation::{AggregatorKind, ClientUpdate};
pub use model::{AdamHyper, AdamState, Dims, ParamSet};
pub use orchestrator::{run_experiment, ExperimentReport, RoundRecord};
pub use poisoning::{AttackSpec, FlipRecord};
pub use rng::SeedDomain;
