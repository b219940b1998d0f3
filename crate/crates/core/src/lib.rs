//! Net survival estimation when death from the disease and death from other
//! causes may be dependent.
//!
//! The dependence is described by an Archimedean survival copula between
//! the excess time `E` and the population time `P`. With the independence
//! copula the estimator is the classical Pohar Perme estimator.
//!
//! - [`copula`]: families, partial derivatives, tau conversion and sampling.
//! - [`lifetable`]: rate tables and per-patient population hazard paths.
//! - [`cohort`]: patient records and CSV loading.
//! - [`estimator`]: the mesh, both fitters and the bootstrap.
//! - [`inference`]: the log-rank-type test between groups.
//! - [`simulation`]: cohorts with known truth and Monte Carlo studies.
//! - [`report`]: CSV output.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod copula;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod lifetable;
mod quadrature;
pub mod report;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
