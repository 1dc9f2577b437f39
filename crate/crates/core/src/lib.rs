//! Desk-scale federated optimization simulator.
//!
//! Trains small differentiable models across simulated clients with
//! heterogeneous (Dirichlet-partitioned) data, compares client step rules —
//! including a locality-adaptive one that prices its step size from the
//! trajectory — under several server aggregators, and instruments runs with
//! convergence diagnostics. Everything is deterministic given a seed.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod math;
pub mod models;
pub mod optim;
pub mod partition;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sweep;

pub use error::{Error, Result};
pub use math::ParamVector;
