//! Deterministic 2D ball-placement puzzle benchmark.
//!
//! The crate is organized around the benchmark pipeline:
//!
//! - [`physics2d`]: fixed-timestep impulse-based rigid-body simulator
//! - [`tasks`]: task templates, instantiation, goal checking, evaluation folds
//! - [`actions`]: the ball-placement action space and uniform sampling
//! - [`raster`]: 7-channel occupancy frames and forward-prediction accuracy
//! - [`metrics`]: success curves, AUCCESS, success@k, per-template reports
//!
//! Everything is pure and deterministic: the same inputs produce bit-identical
//! outputs on the same build.

pub mod actions;
pub mod geom;
pub mod metrics;
pub mod physics2d;
pub mod raster;
pub mod rng;
pub mod tasks;
