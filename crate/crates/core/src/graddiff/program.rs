// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Trajectory programs: an ordered list of gates, measurements, dissipation
//! and reward taps, with controls bound to controller outputs.

use crate::channels::{DissipationSpec, Lindblad};
use crate::error::{Error, Result};
use crate::gates::DisplacementCache;
use crate::qcore::{CMat, HilbertLayout};
use std::sync::Arc;

/// Source of one real gate parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ctl {
    /// Component of the most recent controller output.
    Control(usize),
    Fixed(f64),
}

/// What a reward tap evaluates on the normalized state.
#[derive(Clone, Debug)]
pub enum RewardObs {
    /// `<ψ|ρ|ψ>` for a column vector `ψ`.
    Overlap(Arc<CMat>),
    /// `tr ρ²`.
    Purity,
    /// `Re tr(Hρ)` for a Hermitian `H`.
    Expectation(Arc<CMat>),
}

/// One primitive of a program.
#[derive(Clone, Debug)]
pub enum Op {
    /// Ask the controller for the next control vector.
    Decide,
    QubitDrive { slot: usize, re: Ctl, im: Ctl },
    JcInteraction { slot: usize, re: Ctl, im: Ctl },
    /// `D(α) S(φ) D(α)†`.
    SnapBlock { re: Ctl, im: Ctl, phases: Vec<Ctl> },
    /// `exp(−i gτ σx/2)` with the trajectory coupling `g`.
    SpinRotation { tau: Ctl },
    /// Two-outcome dispersive family, labels +1 and −1.
    DispersiveMeasure { gamma: Ctl, delta: Ctl },
    /// Projective qubit readout; +1 is the ground state.
    MeasureZ { slot: usize },
    /// Reparametrized continuous readout of a qubit slot.
    ContinuousReadout { slot: usize, noise_std: f64 },
    Dissipate(DissipationSpec),
    Reward { obs: RewardObs, weight: f64 },
}

impl Op {
    pub fn is_measurement(&self) -> bool {
        matches!(self, Op::DispersiveMeasure { .. } | Op::MeasureZ { .. } | Op::ContinuousReadout { .. })
    }

    pub fn ctls(&self) -> Vec<Ctl> {
        match self {
            Op::QubitDrive { re, im, .. } | Op::JcInteraction { re, im, .. } => vec![*re, *im],
            Op::SnapBlock { re, im, phases } => {
                let mut v = vec![*re, *im];
                v.extend(phases.iter().copied());
                v
            }
            Op::SpinRotation { tau } => vec![*tau],
            Op::DispersiveMeasure { gamma, delta } => vec![*gamma, *delta],
            _ => Vec::new(),
        }
    }
}

/// Gaussian uncertainty on the spin coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub mean: f64,
    pub std: f64,
    pub quadrature_nodes: usize,
    /// Draw `g` per trajectory in Monte-Carlo mode; otherwise use the mean.
    pub resample: bool,
}

impl Coupling {
    pub fn fixed(g: f64) -> Self {
        Self { mean: g, std: 0.0, quadrature_nodes: 1, resample: false }
    }
}

/// A fully bound trajectory plan.
#[derive(Clone, Debug)]
pub struct Program {
    pub layout: HilbertLayout,
    pub initial: CMat,
    pub ops: Vec<Op>,
    /// Length of each controller output.
    pub ctl_dim: usize,
    pub coupling: Coupling,
    pub lindblad: Option<Arc<Lindblad>>,
    pub displacement: Option<Arc<DisplacementCache>>,
}

impl Program {
    pub fn new(layout: HilbertLayout, initial: CMat, ops: Vec<Op>, ctl_dim: usize) -> Result<Self> {
        let needs_lindblad = ops.iter().any(|o| matches!(o, Op::Dissipate(_)));
        let needs_disp = ops.iter().any(|o| matches!(o, Op::SnapBlock { .. }));
        let lindblad = if needs_lindblad { Some(Arc::new(Lindblad::new(layout)?)) } else { None };
        let displacement = if needs_disp { Some(Arc::new(DisplacementCache::new(layout)?)) } else { None };
        let p = Self { layout, initial, ops, ctl_dim, coupling: Coupling::fixed(1.0), lindblad, displacement };
        p.validate()?;
        Ok(p)
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    fn validate(&self) -> Result<()> {
        let dim = self.layout.dim();
        if self.initial.shape() != (dim, dim) {
            return Err(Error::DimMismatch(format!("initial state is not {dim}x{dim}")));
        }
        let mut decided = false;
        for (i, op) in self.ops.iter().enumerate() {
            if matches!(op, Op::Decide) {
                decided = true;
            }
            for c in op.ctls() {
                if let Ctl::Control(k) = c {
                    if !decided {
                        return Err(Error::Contract(format!("op {i} reads a control before any decision")));
                    }
                    if k >= self.ctl_dim {
                        return Err(Error::Contract(format!("op {i} reads control {k} of {}", self.ctl_dim)));
                    }
                }
            }
            match op {
                Op::SpinRotation { .. } if dim != 2 => {
                    return Err(Error::InvalidLayout("spin rotation needs a bare qubit".into()))
                }
                Op::QubitDrive { slot, .. } | Op::JcInteraction { slot, .. } | Op::MeasureZ { slot }
                | Op::ContinuousReadout { slot, .. }
                    if *slot >= self.layout.qubit_slots =>
                {
                    return Err(Error::InvalidLayout(format!("op {i} addresses missing qubit slot {slot}")))
                }
                Op::Reward { obs: RewardObs::Overlap(k), .. } if k.shape() != (dim, 1) => {
                    return Err(Error::DimMismatch(format!("reward target of op {i} has wrong shape")))
                }
                Op::Reward { obs: RewardObs::Expectation(h), .. } if h.shape() != (dim, dim) => {
                    return Err(Error::DimMismatch(format!("reward observable of op {i} has wrong shape")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_decisions(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, Op::Decide)).count()
    }

    pub fn n_measurements(&self) -> usize {
        self.ops.iter().filter(|o| o.is_measurement()).count()
    }

    /// Number of measurements preceding each decision.
    pub fn decision_depths(&self) -> Vec<usize> {
        let mut k = 0;
        let mut out = Vec::new();
        for op in &self.ops {
            if op.is_measurement() {
                k += 1;
            } else if matches!(op, Op::Decide) {
                out.push(k);
            }
        }
        out
    }

    pub fn has_continuous(&self) -> bool {
        self.ops.iter().any(|o| matches!(o, Op::ContinuousReadout { .. }))
    }
}
