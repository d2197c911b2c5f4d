//! Discrete-event simulation of resource allocation across cloud centers,
//! with request size reduction under congestion and a fairness-aware
//! discard gate.
//!
//! A run is described by a [`ScenarioConfig`]: centers with processing and
//! bandwidth capacity, users with their generation patterns and reduction
//! profiles, the congestion thresholds, and the control method. [`run`]
//! simulates it and returns [`RunMetrics`]. The [`experiments`] module
//! replicates runs over parameter sweeps.
//!
//! ```
//! use ccsim::presets::single_user_scenario;
//!
//! let metrics = ccsim::run(&single_user_scenario(0.5, 1.0, 1.0)).unwrap();
//! assert!(metrics.total.accepted > 0);
//! ```

pub mod allocation;
pub mod congestion;
pub mod decision_graph;
pub mod error;
pub mod experiments;
pub mod fairness;
pub mod model;
pub mod presets;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use model::{ControlMethod, ResourceType, ScenarioConfig};
pub use scenario::{load_experiment, load_scenario, parse_experiment, parse_scenario};
pub use sim::{run, RunMetrics};
