//! Convergence analysis for sequential generate-and-verify pipelines.
//!
//! A pipeline of `stages` transient stages, each cleared with probability
//! `delta` per attempt, is an absorbing Markov chain whose absorption time is
//! the sum of geometric sojourns. This crate provides:
//!
//! - [`markov`]: fundamental-matrix analysis of absorbing chains
//! - [`sim`]: vectorized Monte Carlo batches and sweeps
//! - [`stats`]: summary metrics, CCDF, negative-binomial oracle
//! - [`regions`]: operating-region classification and timeout budgets
//! - [`calibrate`]: sliding-window drift monitor
//! - [`harness`]: stepwise chain execution with pluggable oracles
//! - [`cli`]: the `convlab` command-line front end

pub mod calibrate;
pub mod cli;
pub mod error;
pub mod harness;
pub mod markov;
pub mod memory;
pub mod regions;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
