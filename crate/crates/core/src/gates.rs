// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Parametrized gates and measurement families, each returned together with
//! its partial derivatives in the real control components.

use crate::channels::MeasurementFamily;
use crate::error::{Error, Result};
use crate::qcore::ops::{annihilation, pauli_x, pauli_y};
use crate::qcore::{c, eigh, CMat, HilbertLayout, C64};
use std::sync::atomic::{AtomicBool, Ordering};

static TRUNCATION_WARNED: AtomicBool = AtomicBool::new(false);

/// A matrix-valued function of real controls, evaluated at a point.
#[derive(Clone, Debug)]
pub struct Gate {
    pub u: CMat,
    /// `∂U/∂c_k` for each control component in declared order.
    pub derivs: Vec<CMat>,
}

/// `exp(-i (s/2)(x A + y B))` with `A² = B² = I`, `{A, B} = 0`, plus the
/// derivatives in `x` and `y`.
fn pauli_rotation(x: f64, y: f64, s: f64, a: &CMat, b: &CMat) -> (CMat, CMat, CMat) {
    let r = (x * x + y * y).sqrt();
    let half = 0.5 * s * r;
    // f = sin(s r / 2) / r, g = f'(r) / r
    let (f, g) = if r < 1e-4 {
        let s3 = s * s * s;
        (0.5 * s - s3 * r * r / 48.0, -s3 / 24.0 + s3 * s * s * r * r / 960.0)
    } else {
        let f = half.sin() / r;
        (f, (0.5 * s * half.cos() * r - half.sin()) / (r * r * r))
    };
    let id = CMat::identity(2);
    let gen = &a.scale_real(x) + &b.scale_real(y);
    let mut u = id.scale_real(half.cos());
    u.axpy(c(0.0, -f), &gen);
    let mut dx = id.scale_real(-0.5 * s * f * x);
    dx.axpy(c(0.0, -g * x), &gen);
    dx.axpy(c(0.0, -f), a);
    let mut dy = id.scale_real(-0.5 * s * f * y);
    dy.axpy(c(0.0, -g * y), &gen);
    dy.axpy(c(0.0, -f), b);
    (u, dx, dy)
}

/// Qubit drive `U_q(α) = exp[−i(ασ₊ + α*σ₋)/2]` on `slot`, α = re + i·im.
pub fn jc_qubit_drive(layout: HilbertLayout, slot: usize, re: f64, im: f64) -> Gate {
    let (u, dx, dy) = pauli_rotation(re, im, 1.0, &pauli_x(), &pauli_y());
    Gate {
        u: layout.embed_qubit(slot, &u),
        derivs: vec![layout.embed_qubit(slot, &dx), layout.embed_qubit(slot, &dy)],
    }
}

/// Interaction `U_qc(β) = exp[−i(β a σ₊ + β* a† σ₋)/2]` with the qubit on
/// `slot`, assembled from closed-form rotations on the blocks
/// `{|n,e>, |n+1,g>}` (angle `|β|√(n+1)/2`).
pub fn jc_interaction(layout: HilbertLayout, slot: usize, re: f64, im: f64) -> Gate {
    let dim = layout.dim();
    let mut u = CMat::identity(dim);
    let mut dx = CMat::zeros(dim, dim);
    let mut dy = CMat::zeros(dim, dim);
    let minus_y = pauli_y().scale_real(-1.0);
    let shift = layout.qubit_slots - 1 - slot;
    for n in 0..layout.fock_cutoff.saturating_sub(1) {
        let (r, bx, by) = pauli_rotation(re, im, ((n + 1) as f64).sqrt(), &pauli_x(), &minus_y);
        for rest in 0..layout.qubit_dim() {
            if (rest >> shift) & 1 == 1 {
                continue;
            }
            let i = layout.index(n, rest | (1 << shift));
            let j = layout.index(n + 1, rest);
            for (p, ip) in [(0, i), (1, j)] {
                for (q, iq) in [(0, i), (1, j)] {
                    u[(ip, iq)] = r[(p, q)];
                    dx[(ip, iq)] = bx[(p, q)];
                    dy[(ip, iq)] = by[(p, q)];
                }
            }
        }
    }
    Gate { u, derivs: vec![dx, dy] }
}

/// Dispersive family `M(+1) = cos(γn + δ/2)`, `M(−1) = sin(γn + δ/2)`.
#[derive(Clone, Debug)]
pub struct DispersivePovm {
    pub plus: Gate,
    pub minus: Gate,
}

impl DispersivePovm {
    pub fn family(&self) -> MeasurementFamily {
        MeasurementFamily::discrete(vec![1, -1], vec![self.plus.u.clone(), self.minus.u.clone()])
            .expect("dispersive family is complete by construction")
    }
}

pub fn dispersive_povm(layout: HilbertLayout, gamma: f64, delta: f64) -> DispersivePovm {
    let phase = |n: usize| gamma * n as f64 + 0.5 * delta;
    let nn = |n: usize| n as f64;
    let d = |f: &dyn Fn(usize) -> f64| CMat::real_diag(&layout.fock_diagonal(f));
    DispersivePovm {
        plus: Gate {
            u: d(&|n| phase(n).cos()),
            derivs: vec![d(&|n| -nn(n) * phase(n).sin()), d(&|n| -0.5 * phase(n).sin())],
        },
        minus: Gate {
            u: d(&|n| phase(n).sin()),
            derivs: vec![d(&|n| nn(n) * phase(n).cos()), d(&|n| 0.5 * phase(n).cos())],
        },
    }
}

/// SNAP gate `Σ e^{iφ_n}|n><n|`, phases beyond the given list are zero.
pub fn snap(layout: HilbertLayout, phases: &[f64]) -> Result<Gate> {
    if phases.len() > layout.fock_cutoff {
        return Err(Error::Invalid(format!(
            "{} SNAP phases exceed cutoff {}",
            phases.len(),
            layout.fock_cutoff
        )));
    }
    let diag: Vec<C64> = (0..layout.dim())
        .map(|i| {
            let n = layout.fock_of(i);
            if n < phases.len() {
                C64::from_polar(1.0, phases[n])
            } else {
                c(1.0, 0.0)
            }
        })
        .collect();
    let derivs = (0..phases.len())
        .map(|k| {
            let d: Vec<C64> = (0..layout.dim())
                .map(|i| if layout.fock_of(i) == k { c(0.0, 1.0) * diag[i] } else { c(0.0, 0.0) })
                .collect();
            CMat::diag(&d)
        })
        .collect();
    Ok(Gate { u: CMat::diag(&diag), derivs })
}

/// Cached spectral data of `H₁ = i(a† − a)` for one layout.
#[derive(Clone, Debug)]
pub struct DisplacementCache {
    layout: HilbertLayout,
    values: Vec<f64>,
    vectors: CMat,
    hx: CMat,
    hy: CMat,
    number: Vec<f64>,
}

impl DisplacementCache {
    pub fn new(layout: HilbertLayout) -> Result<Self> {
        if layout.fock_cutoff < 2 {
            return Err(Error::InvalidLayout("displacement needs cutoff ≥ 2".into()));
        }
        let a = layout.embed_cavity(&annihilation(layout.fock_cutoff));
        let ad = a.adjoint();
        let hx = (&ad - &a).scale(c(0.0, 1.0));
        let hy = (&ad + &a).scale_real(-1.0);
        let e = eigh(&hx);
        let number = layout.fock_diagonal(|n| n as f64);
        Ok(Self { layout, values: e.values, vectors: e.vectors, hx, hy, number })
    }

    pub fn layout(&self) -> HilbertLayout {
        self.layout
    }
}

/// Displacement `D(α) = exp(αa† − α*a)` from the cached eigenbasis of the
/// Hermitian generator, with Daleckii–Krein derivatives in (Re α, Im α).
pub fn displacement(cache: &DisplacementCache, re: f64, im: f64) -> Gate {
    let dim = cache.layout.dim();
    let r = (re * re + im * im).sqrt();
    let phi = im.atan2(re);
    // U = e^{iφn} W diagonalizes the generator with eigenvalues r λ
    let rot: Vec<C64> = cache.number.iter().map(|&n| C64::from_polar(1.0, phi * n)).collect();
    let u = CMat::from_fn(dim, dim, |i, k| rot[i] * cache.vectors[(i, k)]);
    let mu: Vec<f64> = cache.values.iter().map(|&l| r * l).collect();
    let f: Vec<C64> = mu.iter().map(|&m| C64::from_polar(1.0, -m)).collect();
    let ud = u.adjoint();
    let dmat = u.matmul(&CMat::diag(&f)).matmul(&ud);
    let gamma = CMat::from_fn(dim, dim, |k, l| {
        let gap = mu[k] - mu[l];
        if gap.abs() < 1e-10 {
            c(0.0, -1.0) * C64::from_polar(1.0, -0.5 * (mu[k] + mu[l]))
        } else {
            (f[k] - f[l]) / gap
        }
    });
    let dk = |h: &CMat| u.matmul(&ud.matmul(h).matmul(&u).hadamard(&gamma)).matmul(&ud);
    let derivs = vec![dk(&cache.hx), dk(&cache.hy)];
    let tail = truncation_weight(&dmat, cache);
    if r * r > cache.layout.fock_cutoff as f64 / 4.0 && tail > 1e-9 {
        let msg = format!("displacement |α|²={:.3} beyond cutoff/4; top-level weight of D|0> is {tail:.2e}", r * r);
        if TRUNCATION_WARNED.swap(true, Ordering::Relaxed) {
            log::debug!("{msg}");
        } else {
            log::warn!("{msg} (further occurrences logged at debug level)");
        }
    }
    Gate { u: dmat, derivs }
}

/// Weight of `D|0>` on the highest Fock level, a truncation indicator.
fn truncation_weight(d: &CMat, cache: &DisplacementCache) -> f64 {
    let top = cache.layout.fock_cutoff - 1;
    let q = cache.layout.qubit_dim();
    (0..q).map(|b| d[(cache.layout.index(top, b), 0)].norm_sqr()).sum()
}

/// Spin rotation `exp(−i gτ σ_x / 2)` on a bare qubit; control is τ.
pub fn spin_rotation(g: f64, tau: f64) -> Gate {
    let h = 0.5 * g * tau;
    let mut u = CMat::identity(2).scale_real(h.cos());
    u.axpy(c(0.0, -h.sin()), &pauli_x());
    let mut d = CMat::identity(2).scale_real(-0.5 * g * h.sin());
    d.axpy(c(0.0, -0.5 * g * h.cos()), &pauli_x());
    Gate { u, derivs: vec![d] }
}
