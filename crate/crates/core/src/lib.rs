//! Streaming, nonparametric clustering of moving-object trajectories.
//!
//! Observations are clustered in arrival order by a single sweep in which a
//! cluster's pull grows with its membership (`score = e^{-distance} * n_k`)
//! and a new cluster is opened with score `e^{-beta}`. The concentration
//! radius `beta` is a distance, so it can be read straight off the scene.
//! [`dem`] extends the sweep to fixed-duration time segments with a one
//! segment sliding window and emits per-segment cluster statistics.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root pin the common `f64` instantiation.

pub mod baselines;
pub mod cli;
pub mod dem;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod tigm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use dem::{DemConfig, DemState, SegmentStats};
pub use model::{
    distance, extract_features, extract_stream, Cluster, Euclidean, FeatureConfig, FeatureSelector,
    Metric, Observation, TrackPoint, Trajectory,
};
pub use tigm::{AssignmentMode, Candidate, ModelState, Tigm, TigmConfig};

pub type Observation64 = model::Observation<f64>;
pub type Observation32 = model::Observation<f32>;
pub type Cluster64 = model::Cluster<f64>;
pub type ModelState64 = tigm::ModelState<f64>;
pub type ModelState32 = tigm::ModelState<f32>;
pub type TigmConfig64 = tigm::TigmConfig<f64>;
pub type Tigm64 = tigm::Tigm<f64>;
pub type DemState64 = dem::DemState<f64>;
pub type DemConfig64 = dem::DemConfig<f64>;
pub type SegmentStats64 = dem::SegmentStats<f64>;
