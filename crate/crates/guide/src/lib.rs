//! The chapters of `book/` and the README, included so that `cargo test`
//! runs their code samples.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/copulas.md")]
pub mod copulas {}

#[doc = include_str!("../../../book/src/rate-tables.md")]
pub mod rate_tables {}

#[doc = include_str!("../../../book/src/estimator.md")]
pub mod estimator {}

#[doc = include_str!("../../../book/src/logrank.md")]
pub mod logrank {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
