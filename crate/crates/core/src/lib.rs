//! Query engine for video-monitoring queries over per-frame object
//! annotations.
//!
//! Frames pass through cheap approximate filters (per-class counts and
//! per-class occupancy grids) and only the survivors reach full evaluation.
//! Windowed aggregates are estimated from frame samples with single or
//! multiple control variates built from the same filters.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod filters;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod model;
pub mod predicates;
pub mod query;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
