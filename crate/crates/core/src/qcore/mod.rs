// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex linear algebra and quantum-state primitives on truncated
//! Hilbert spaces.

pub mod eig;
pub mod matrix;
pub mod measures;
pub mod ops;
pub mod quadrature;
pub mod states;

pub use eig::{eigh, sqrtm_psd, HermitianEigen};
pub use matrix::{c, CMat, C64};
pub use measures::{fidelity, purity, wigner_grid, PhaseGrid};
pub use ops::{build_operators, HilbertLayout, Operators};
pub use states::{build_state, BuiltState, DensityMatrix, Ket, State, StateKind, DEFAULT_LEAKAGE_TOL};
