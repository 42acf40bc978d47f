//! Offline goal-conditioned navigation from noise-driven exploration data.
//!
//! The pipeline collects exploration trajectories in a grid maze with
//! temporally correlated action noise, encodes observations into unit
//! embeddings, trains a goal-conditioned TD3+BC agent from the stored data,
//! picks a checkpoint with fitted Q evaluation and measures success on
//! held-out goals.

pub mod config;
pub mod datastore;
pub mod encoder;
pub mod experiments;
pub mod fqe;
pub mod mazesim;
pub mod metrics;
pub mod neural;
pub mod noisegen;
pub mod pipeline;
pub mod seeding;
pub mod trainer;
