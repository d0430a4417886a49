//! Estimation of individual team-player effects from team match logs.
//!
//! The pipeline ingests match records, builds time-causal team features,
//! fits logistic win models on one half of the team matches, turns the
//! residuals into per-player effects, and evaluates those effects together
//! with task proficiency and team familiarity on the other half. A seeded Elo
//! matchmaking simulator with injected latent traits provides ground truth.

pub mod analysis;
pub mod error;
pub mod features;
pub mod glm;
pub mod match_data;
pub mod pipeline;
pub mod simgen;
pub mod stats;
pub mod tp_effect;
pub mod util;

pub use error::{Error, ErrorClass, Result};
