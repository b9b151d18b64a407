//! Continual learning for tabular malware streams with distribution-aware
//! replay.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod data;
pub mod dataset;
pub mod error;
pub mod iforest;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod scenario;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Sample32 = data::Sample<f32>;
pub type Sample64 = data::Sample<f64>;
pub type TaskData32 = data::TaskData<f32>;
pub type TaskData64 = data::TaskData<f64>;
pub type TaskStream32 = data::TaskStream<f32>;
pub type TaskStream64 = data::TaskStream<f64>;
pub type DataPool32 = data::DataPool<f32>;
pub type DataPool64 = data::DataPool<f64>;
pub type RawDataset32 = dataset::RawDataset<f32>;
pub type RawDataset64 = dataset::RawDataset<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type Mlp64 = nn::Mlp<f64>;
pub type IForest32 = iforest::IForest<f32>;
pub type IForest64 = iforest::IForest<f64>;
pub type ScenarioOutcome32 = scenario::ScenarioOutcome<f32>;
pub type ScenarioOutcome64 = scenario::ScenarioOutcome<f64>;
