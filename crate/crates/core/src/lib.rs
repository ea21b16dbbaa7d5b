//! Differentially private distributed optimization.
//!
//! `N` agents jointly minimize `Σ f_i` over a box while exchanging only
//! Laplace-noised estimates over a time-varying doubly stochastic network.
//! The crate simulates the iteration, accounts for the privacy budget,
//! checks the privacy guarantee on sampled executions, evaluates the
//! convergence and accuracy bounds, tunes the schedule parameters and runs
//! seeded Monte Carlo experiments.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod math;
pub mod privacy;
pub mod problem;
pub mod rng;
pub mod tuning;

pub use error::{Error, Result};
