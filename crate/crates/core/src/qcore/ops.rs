// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Truncated cavity ⊗ qubit layouts and their standard operators.

use super::matrix::{c, CMat};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Tensor layout `cavity ⊗ qubit_0 ⊗ ... ⊗ qubit_{q-1}`.
///
/// Basis index is `n * 2^q + bits`, with qubit 0 as the most significant
/// bit. Bit value 0 is the ground state `|g>` (σ_z = +1), 1 is `|e>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertLayout {
    pub fock_cutoff: usize,
    pub qubit_slots: usize,
}

impl HilbertLayout {
    pub fn new(fock_cutoff: usize, qubit_slots: usize) -> Result<Self> {
        if fock_cutoff == 0 {
            return Err(Error::InvalidLayout("fock cutoff must be at least 1".into()));
        }
        if qubit_slots > 2 {
            return Err(Error::InvalidLayout(format!("at most 2 qubit slots, got {qubit_slots}")));
        }
        Ok(Self { fock_cutoff, qubit_slots })
    }

    pub fn cavity(fock_cutoff: usize) -> Self {
        Self { fock_cutoff, qubit_slots: 0 }
    }

    /// Single bare qubit (cavity dimension 1).
    pub fn qubit() -> Self {
        Self { fock_cutoff: 1, qubit_slots: 1 }
    }

    pub fn qubit_dim(&self) -> usize {
        1 << self.qubit_slots
    }

    pub fn dim(&self) -> usize {
        self.fock_cutoff * self.qubit_dim()
    }

    /// Basis index of Fock level `n` with qubit bits `bits`.
    pub fn index(&self, n: usize, bits: usize) -> usize {
        n * self.qubit_dim() + bits
    }

    /// Fock number of a basis index.
    pub fn fock_of(&self, idx: usize) -> usize {
        idx / self.qubit_dim()
    }

    /// Bit of qubit `slot` in a basis index.
    pub fn qubit_bit(&self, idx: usize, slot: usize) -> usize {
        (idx >> (self.qubit_slots - 1 - slot)) & 1
    }

    /// Embed a cavity operator as `A ⊗ I`.
    pub fn embed_cavity(&self, a: &CMat) -> CMat {
        assert_eq!(a.rows(), self.fock_cutoff);
        if self.qubit_slots == 0 {
            a.clone()
        } else {
            a.kron(&CMat::identity(self.qubit_dim()))
        }
    }

    /// Embed a 2x2 operator on qubit `slot`.
    pub fn embed_qubit(&self, slot: usize, q: &CMat) -> CMat {
        assert!(slot < self.qubit_slots, "qubit slot {slot} out of range");
        assert_eq!(q.shape(), (2, 2));
        let mut op = CMat::identity(self.fock_cutoff);
        for s in 0..self.qubit_slots {
            let factor = if s == slot { q.clone() } else { CMat::identity(2) };
            op = op.kron(&factor);
        }
        op
    }

    /// Diagonal of `f(n) ⊗ I` over the full basis.
    pub fn fock_diagonal(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.dim()).map(|i| f(self.fock_of(i))).collect()
    }

    /// Reduce a full-space density matrix to the cavity factor.
    pub fn partial_trace_qubits(&self, rho: &CMat) -> CMat {
        let q = self.qubit_dim();
        if q == 1 {
            return rho.clone();
        }
        let nf = self.fock_cutoff;
        CMat::from_fn(nf, nf, |m, n| (0..q).map(|b| rho[(m * q + b, n * q + b)]).sum())
    }
}

/// Operator set on a layout.
#[derive(Clone, Debug)]
pub struct Operators {
    pub layout: HilbertLayout,
    pub a: CMat,
    pub adag: CMat,
    pub n: CMat,
    pub identity: CMat,
    /// Per qubit slot: σ+ = |e><g|.
    pub sigma_plus: Vec<CMat>,
    pub sigma_minus: Vec<CMat>,
    pub sigma_x: Vec<CMat>,
    pub sigma_y: Vec<CMat>,
    pub sigma_z: Vec<CMat>,
}

/// Cavity-only ladder operator on `cutoff` levels.
pub fn annihilation(cutoff: usize) -> CMat {
    let mut a = CMat::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn pauli_x() -> CMat {
    CMat::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_y() -> CMat {
    CMat::from_vec(2, 2, vec![c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

/// σ_z in the (g, e) basis: +1 on g.
pub fn pauli_z() -> CMat {
    CMat::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

/// |e><g| in the (g, e) basis.
pub fn raising() -> CMat {
    CMat::from_real(2, 2, &[0.0, 0.0, 1.0, 0.0])
}

/// Build the standard operator set, embedded on the full tensor space.
pub fn build_operators(layout: HilbertLayout) -> Result<Operators> {
    if layout.fock_cutoff < 2 {
        return Err(Error::InvalidLayout(format!(
            "fock cutoff must be at least 2, got {}",
            layout.fock_cutoff
        )));
    }
    let a_c = annihilation(layout.fock_cutoff);
    let a = layout.embed_cavity(&a_c);
    let adag = a.adjoint();
    let n = adag.matmul(&a);
    let mut ops = Operators {
        layout,
        identity: CMat::identity(layout.dim()),
        a,
        adag,
        n,
        sigma_plus: vec![],
        sigma_minus: vec![],
        sigma_x: vec![],
        sigma_y: vec![],
        sigma_z: vec![],
    };
    for s in 0..layout.qubit_slots {
        ops.sigma_plus.push(layout.embed_qubit(s, &raising()));
        ops.sigma_minus.push(layout.embed_qubit(s, &raising().adjoint()));
        ops.sigma_x.push(layout.embed_qubit(s, &pauli_x()));
        ops.sigma_y.push(layout.embed_qubit(s, &pauli_y()));
        ops.sigma_z.push(layout.embed_qubit(s, &pauli_z()));
    }
    Ok(ops)
}
