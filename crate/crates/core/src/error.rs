// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("truncation leakage {lost:.3e} exceeds tolerance {tol:.1e} for {what}")]
    Truncation { what: String, lost: f64, tol: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("branch cap exceeded: {branches} branches > cap {cap}")]
    BranchCap { branches: usize, cap: usize },
    #[error("non-finite value in adjoint of node {node} ({op})")]
    NonFinite { node: usize, op: String },
    #[error("non-finite return: {0}")]
    NonFiniteReturn(String),
    #[error("non-finite gradient; trajectory: {0}")]
    NonFiniteGradient(String),
    #[error("controller: {0}")]
    Controller(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("io: {0}")]
    Io(String),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
