//! Explicit-duration higher-order hidden semi-Markov models.
//!
//! The crate covers the full prognostics flow: jump-threshold segmentation,
//! two-stage Gibbs inference with lag selection, posterior-mode decoding of
//! new sequences, and Monte-Carlo remaining-useful-life estimation. The
//! [`features`] module turns sensor tables into univariate health indicators
//! and generates synthetic benchmark data.

pub mod cli;
pub mod decoder;
pub mod dist;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rul;
pub mod sampler;
pub mod segmentation;

pub use error::{HohsmmError, Result};
