//! Online task-change detection for lifelong reinforcement learning.
//!
//! A stream of `(reward, action, latent)` samples is summarized by sliced
//! Wasserstein distances between a recent and an older window; a one-sided
//! Kolmogorov-Smirnov test on the history of those distances flags a task
//! change. Each detected task gets its own label and policy, and a returning
//! task is recognized by briefly deploying stored policies.

pub mod agent;
pub mod config;
pub mod detector;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ot;
pub mod rng;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
