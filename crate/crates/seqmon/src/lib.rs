//! Group-sequential monitoring of two-arm experiments with adaptive assignment.
//!
//! The crate implements sequential hypothesis tests for streaming experiment
//! data in which treatment assignment may depend on past observations:
//!
//! * [`qte::QteMonitor`] tests whether the treatment's conditional mean reward
//!   exceeds control's *anywhere* in covariate space, via a studentized
//!   supremum statistic over a regression basis.
//! * [`ate::AteMonitor`] tests the covariate-averaged treatment effect.
//! * [`baselines::LilMonitor`] and [`baselines::AvtMonitor`] are reference
//!   procedures: an iterated-logarithm envelope and a mixture sequential
//!   probability ratio test.
//!
//! Stopping boundaries come from a streaming multiplier bootstrap: each interim
//! stage perturbs the per-arm least-squares coefficients with one Gaussian draw
//! scaled by the stage's heteroskedasticity-robust variance block, and an
//! alpha-spending schedule prunes bootstrap paths so the cumulative pruned
//! fraction tracks the spent type-I budget. All state updates are one-pass;
//! raw observations are never retained by the monitors.
//!
//! [`simlab`] generates synthetic experiments and runs deterministic parallel
//! Monte-Carlo suites. The `seqmon` binary (see [`cli`]) exposes simulation,
//! CSV observation-log replay with checkpoint/resume, and assignment queries.

pub mod ate;
pub mod baselines;
pub mod basis;
pub mod bootstrap;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod driver;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod policies;
pub mod qte;
pub mod replay;
pub mod report;
pub mod rng;
pub mod simlab;
pub mod spending;
pub mod stream;

pub use error::{Error, Result};
