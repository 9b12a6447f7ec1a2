//! Maximum residual down (MRD) multiple testing for correlated
//! multivariate-normal data.
//!
//! The MRD procedure is a step-down multiple testing method that, at each
//! stage, rejects the hypothesis whose standardized conditional residual is
//! largest among the hypotheses still in play, then recomputes the residuals
//! on the reduced set. Because the residuals condition on the remaining
//! coordinates, the method uses the known covariance structure at every
//! stage, unlike the usual step-up/step-down procedures driven by marginal
//! P-values.
//!
//! The crate provides:
//!
//! - structured covariance models (intraclass, change-point tridiagonal,
//!   successive correlation, dense SPD) with closed-form and generic
//!   linear-algebra kernels ([`covariance`]);
//! - the adaptive residual statistics, generically and via O(p) fast paths
//!   ([`residuals`]);
//! - the decision procedures: MRD, the likelihood-ratio step-down (LRSD),
//!   Benjamini–Hochberg step-up, Holm-type marginal step-down, and a
//!   Dunnett-style step-down with Monte Carlo critical values
//!   ([`procedures`]);
//! - critical-value schedules and the normal-quantile kernel
//!   ([`critical_values`]);
//! - seeded scenario generators for the treatments-vs-control, change-point
//!   and successive-correlation models ([`scenarios`]);
//! - a deterministic, parallel simulation harness accumulating expected
//!   type I/II error counts and FDR with Monte Carlo standard errors
//!   ([`simulation`]);
//! - a self-check suite comparing closed forms against the generic engine
//!   ([`verify`]).

pub mod covariance;
pub mod critical_values;
mod error;
pub mod matrix;
pub mod procedures;
pub mod projection;
pub mod residuals;
pub mod rng;
pub mod scenarios;
pub mod simulation;
pub mod special;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
