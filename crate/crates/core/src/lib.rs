//! Runtime safety monitoring for Q-learning agents.
//!
//! The pipeline trains a small DQN agent on a classic-control environment,
//! collects labeled episodes from its greedy policy, groups concrete states
//! into abstract states by bucketing their Q-values, trains a random forest
//! over per-episode abstract-state features, and finally monitors live
//! executions step by step, firing a latched "unsafe" decision when the
//! forest's confidence interval crosses a threshold.

pub mod abstraction;
pub mod agent;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod forest;
pub mod monitor;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
