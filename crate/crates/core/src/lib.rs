//! Multi-agent simulation of privacy-aware data disclosure in recommender
//! systems.
//!
//! Each user is an epsilon-greedy bandit choosing which slices of their
//! interaction history to hand to the platform. Every epoch the platform
//! retrains its recommender from scratch on whatever was disclosed, users
//! are scored with leave-one-out NDCG, and each user's reward trades that
//! utility against a privacy cost scaled by a calibrated sensitivity weight.
//!
//! Module map:
//!
//! - [`dataset`]: log parsing, filtering, per-user sequences, leave-one-out.
//! - [`mechanism`]: percentage split and the disclosure choice spaces.
//! - [`privacy`]: privacy cost, sensitivity weights, rewards, user groups.
//! - [`agent`]: epsilon-greedy bandit state.
//! - [`recommender`]: popularity, BPR matrix factorization and Markov models.
//! - [`eval`]: NDCG@k, per-user evaluation and epoch aggregation.
//! - [`engine`]: calibration and the epoch loop.
//! - [`config`] and [`cli`]: configuration files and command entry points.

pub mod agent;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod mechanism;
pub mod privacy;
pub mod ratio;
pub mod recommender;
pub mod seed;

pub use error::{Error, Result};
