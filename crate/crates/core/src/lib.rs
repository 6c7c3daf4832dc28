//! Simulator for serverless federated learning by sequential model
//! migration between edge clusters, with FedAvg and hierarchical baselines,
//! hop-weighted communication accounting and convergence-bound checks.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod params;
pub mod rng;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
pub use params::ParamVector;
