//! Data-driven randomized learning of single-hidden-layer feedforward
//! networks, in its original one-shot form (D-DM) and the constructive
//! accept/reject variant (CD-DM), with a benchmark harness for the
//! synthetic and KEEL regression problems.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod modelselect;
pub mod neighborhood;
pub mod network;
pub mod nodegen;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the default double-precision pipeline.
pub type Dataset64 = dataset::Dataset<f64>;
pub type Normalizer64 = dataset::Normalizer<f64>;
pub type Model64 = network::NetworkModel<f64>;
pub type TrainConfig64 = trainer::TrainConfig<f64>;
pub type TrialRecord64 = trainer::TrialRecord<f64>;

/// Single-precision aliases.
pub type Dataset32 = dataset::Dataset<f32>;
pub type Model32 = network::NetworkModel<f32>;
pub type TrainConfig32 = trainer::TrainConfig<f32>;
