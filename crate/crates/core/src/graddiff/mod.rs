// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Differentiable trajectory recording and gradient estimation.

pub mod adjoint;
pub mod continuous;
pub mod program;
pub mod record;
pub mod tape;

pub use adjoint::{adjoint_gradient, AdjointMode};
pub use program::{Coupling, Ctl, Op, Program, RewardObs};
pub use record::{
    backward, enumerate_record, finite_diff_check, forward_record, rel_error, CoefficientMode, Draw, Enumerated,
    FdReport, OutcomeSource, RecordOptions, Recorded, SurrogateScalar, Trajectory, DEFAULT_BRANCH_CAP,
};
pub use tape::{CustomOp, NodeId, RealFn, Tape};
