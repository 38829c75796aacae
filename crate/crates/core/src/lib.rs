// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Gradient ascent through measurement-conditioned quantum dynamics.
//!
//! Quantum trajectories that interleave parametrized evolution with
//! measurements are recorded on a reverse-mode tape. The tape differentiates
//! a surrogate whose gradient is the log-likelihood-corrected estimator of
//! the mean return. Controllers
//! (lookup tables or neural networks) map measurement records
//! to gate parameters and are trained with Adam.

pub mod error;
pub mod gates;
pub mod graddiff;
pub mod channels;
pub mod controllers;
pub mod qcore;
pub mod tasks;
pub mod training;
pub mod analysis;

pub use error::{Error, Result};
