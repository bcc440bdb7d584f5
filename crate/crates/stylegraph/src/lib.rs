//! Maps raw vehicle trajectories to driver-behavior predictions.
//!
//! The pipeline: per-frame traffic graphs over vehicle positions feed a
//! cumulative adjacency matrix; degree and closeness centrality series per
//! vehicle are fitted with (Tikhonov-regularized) polynomials; the
//! derivatives of those fits yield style likelihood/intensity estimates
//! (overspeeding, overtaking, sudden lane-changes, weaving); a small
//! classifier maps the fitted features to aggressive/conservative labels.
//! A synthetic highway generator and an evaluation kit (annotation
//! aggregation + time-deviation error) make every stage testable without
//! proprietary traffic data.

pub mod centrality;
pub mod classify;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod io;
pub mod polyfit;
pub mod styles;
pub mod synthgen;

pub use config::AnalysisConfig;
pub use error::{Error, Result};
pub use io::{AgentId, AgentType, TrajectoryPoint, TrajectorySet};
