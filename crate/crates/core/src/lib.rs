//! Likelihood-free (ABC) inference with learned dataset distances.
//!
//! The crate covers the full pipeline for calibrating a stochastic deposition
//! simulator from a single observed dataset:
//!
//! * [`model`] — parameter space, priors, deposit datasets, a fast surrogate
//!   simulator and an adapter for out-of-process simulators;
//! * [`distances`] — Euclidean / Mahalanobis / embedding / summary-statistics
//!   distances with a common artifact format;
//! * [`nn`] — the small dense networks and SGD used by the trainers;
//! * [`metric`] — similarity labelling and the four distance trainers;
//! * [`kl`] — the importance-sampling KL protocol that ranks trained
//!   distances;
//! * [`abc`] — rejection ABC and adaptive population Monte Carlo ABC,
//!   estimation and posterior predictive checks;
//! * [`scheduler`] — the two-level scheduler/team runtime that fans
//!   simulations out to workers.

pub mod abc;
pub mod distances;
pub mod error;
pub mod kl;
pub mod metric;
pub mod model;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod scheduler;

pub use error::{Error, Result};
