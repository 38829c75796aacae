// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Kets and density matrices with the usual state constructors.

#[cfg(debug_assertions)]
use super::eig::eigh;
use super::matrix::{c, CMat, C64};
use super::ops::HilbertLayout;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default tolerance on norm lost to the Fock cutoff.
pub const DEFAULT_LEAKAGE_TOL: f64 = 1e-6;

/// Normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amps: CMat,
}

impl Ket {
    /// Normalizes the amplitudes; fails on a zero vector.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let v = CMat::column(amps);
        let norm = v.norm_sqr().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Invalid("ket with zero or non-finite norm".into()));
        }
        Ok(Self { amps: v.scale_real(1.0 / norm) })
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![C64::new(0.0, 0.0); dim];
        v[i] = c(1.0, 0.0);
        Self { amps: CMat::column(v) }
    }

    pub fn dim(&self) -> usize {
        self.amps.rows()
    }

    pub fn amplitudes(&self) -> &CMat {
        &self.amps
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix { mat: CMat::outer(&self.amps, &self.amps) }
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &Ket) -> C64 {
        self.amps.inner(&other.amps)
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: CMat,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10) and trace (1e-8); positivity is
    /// checked in debug builds only.
    pub fn new(mat: CMat) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimMismatch("density matrix must be square".into()));
        }
        let herm = mat.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::Contract(format!("density matrix not Hermitian (error {herm:.2e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::Contract(format!("density matrix trace {tr} != 1")));
        }
        #[cfg(debug_assertions)]
        {
            let lo = eigh(&mat).values.first().copied().unwrap_or(0.0);
            if lo < -1e-8 {
                return Err(Error::Contract(format!("density matrix eigenvalue {lo:.2e} < 0")));
            }
        }
        Ok(Self { mat })
    }

    /// Wrap without validation; used on hot paths where the invariants
    /// hold by construction.
    pub fn from_matrix_unchecked(mat: CMat) -> Self {
        Self { mat }
    }

    /// `I / d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { mat: CMat::identity(dim).scale_real(1.0 / dim as f64) }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }
}

/// Either representation of a quantum state.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Pure(Ket),
    Mixed(DensityMatrix),
}

impl State {
    pub fn dim(&self) -> usize {
        match self {
            State::Pure(k) => k.dim(),
            State::Mixed(r) => r.dim(),
        }
    }

    pub fn density(&self) -> DensityMatrix {
        match self {
            State::Pure(k) => k.to_density(),
            State::Mixed(r) => r.clone(),
        }
    }

    pub fn as_ket(&self) -> Option<&Ket> {
        match self {
            State::Pure(k) => Some(k),
            State::Mixed(_) => None,
        }
    }
}

/// Kinds of initial or target state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StateKind {
    Ground,
    Fock { n: usize },
    /// Normalized superposition of Fock levels with the given amplitudes.
    Superposition { amplitudes: Vec<(usize, f64)> },
    Coherent { re: f64, im: f64 },
    Kitten2 { re: f64, im: f64 },
    Kitten4 { re: f64, im: f64 },
    Thermal { n_bar: f64 },
    Gkp { delta: f64 },
}

/// Constructed state together with its truncation leakage.
#[derive(Clone, Debug)]
pub struct BuiltState {
    pub state: State,
    /// Norm (or probability) lost to the cutoff before renormalization.
    pub leakage: f64,
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Cavity amplitudes of `Σ_k |i^k α>` restricted to `n ≡ 0 mod period`
/// (period 1 is a coherent state), with the exact leakage.
fn coherent_family(alpha: C64, period: usize, cutoff: usize) -> (Vec<C64>, f64) {
    let x = alpha.norm_sqr();
    let mut amps = vec![C64::new(0.0, 0.0); cutoff];
    let mut kept = 0.0;
    for n in (0..cutoff).step_by(period) {
        let ln_mag = if x > 0.0 { 0.5 * (n as f64) * x.ln() } else if n == 0 { 0.0 } else { f64::NEG_INFINITY };
        let ln_w = 2.0 * ln_mag - ln_factorial(n) - x;
        let mag = (0.5 * ln_w).exp();
        let phase = if n == 0 || x == 0.0 { c(1.0, 0.0) } else { (alpha / alpha.norm()).powu(n as u32) };
        amps[n] = phase * mag;
        kept += ln_w.exp();
    }
    // e^{-x} times the sum of x^n/n! over n ≡ 0 mod period
    let total = match period {
        1 => 1.0,
        2 => 0.5 * (1.0 + (-2.0 * x).exp()),
        4 => 0.25 * (1.0 + (-2.0 * x).exp() + 2.0 * (-x).exp() * x.cos()),
        _ => unreachable!("unsupported period"),
    };
    let leakage = ((total - kept) / total).max(0.0);
    (amps, leakage)
}

/// Hermite function ψ_n(x) for all n ≤ nmax, computed with a rescaled
/// recurrence so that large |x| does not underflow early.
pub fn hermite_functions(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    let mut log_scale = -0.5 * x * x;
    let mut prev = 0.0f64;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    out[0] = cur * log_scale.exp();
    for n in 0..nmax {
        let next = (2.0 / (n as f64 + 1.0)).sqrt() * x * cur - (n as f64 / (n as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if m > 1e150 {
            prev /= m;
            cur /= m;
            log_scale += m.ln();
        }
        out[n + 1] = cur * log_scale.exp();
    }
    out
}

/// Unnormalized Fock amplitudes of the finite-energy grid state up to `nmax`.
pub fn gkp_amplitudes(delta: f64, nmax: usize) -> Vec<f64> {
    let spacing = (2.0 * std::f64::consts::PI).sqrt();
    let mut sums = hermite_functions(nmax, 0.0);
    let turning = (2.0 * nmax as f64 + 1.0).sqrt();
    let mut j = 1usize;
    loop {
        let x = j as f64 * spacing;
        let h = hermite_functions(nmax, x);
        let mut added = 0.0;
        for n in (0..=nmax).step_by(2) {
            // ψ_n is even for even n, so ±j contribute equally
            let t = 2.0 * h[n];
            sums[n] += t;
            added += (t * (-delta * delta * n as f64).exp()).powi(2);
        }
        if x > turning && added < 1e-20 {
            break;
        }
        j += 1;
    }
    (0..=nmax)
        .map(|n| if n % 2 == 0 { sums[n] * (-delta * delta * n as f64).exp() } else { 0.0 })
        .collect()
}

/// Construct a state of the given kind on `layout`, qubits in `|g>`.
pub fn build_state(kind: &StateKind, layout: HilbertLayout, leakage_tol: f64) -> Result<BuiltState> {
    let nf = layout.fock_cutoff;
    let check = |what: &str, lost: f64| -> Result<()> {
        if lost > leakage_tol {
            Err(Error::Truncation { what: what.to_string(), lost, tol: leakage_tol })
        } else {
            Ok(())
        }
    };
    let embed = |cav: &[C64]| -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); layout.dim()];
        for (n, &a) in cav.iter().enumerate() {
            v[layout.index(n, 0)] = a;
        }
        v
    };
    match kind {
        StateKind::Ground => Ok(BuiltState { state: State::Pure(Ket::basis(layout.dim(), 0)), leakage: 0.0 }),
        StateKind::Fock { n } => {
            if *n >= nf {
                return Err(Error::Truncation { what: format!("fock {n}"), lost: 1.0, tol: leakage_tol });
            }
            Ok(BuiltState { state: State::Pure(Ket::basis(layout.dim(), layout.index(*n, 0))), leakage: 0.0 })
        }
        StateKind::Superposition { amplitudes } => {
            let mut cav = vec![C64::new(0.0, 0.0); nf];
            let mut lost = 0.0;
            let mut total = 0.0;
            for &(n, a) in amplitudes {
                total += a * a;
                if n < nf {
                    cav[n] += c(a, 0.0);
                } else {
                    lost += a * a;
                }
            }
            let lost = if total > 0.0 { lost / total } else { 0.0 };
            check("superposition", lost)?;
            Ok(BuiltState { state: State::Pure(Ket::new(embed(&cav))?), leakage: lost })
        }
        StateKind::Coherent { re, im } | StateKind::Kitten2 { re, im } | StateKind::Kitten4 { re, im } => {
            let alpha = c(*re, *im);
            let (period, name) = match kind {
                StateKind::Coherent { .. } => (1, "coherent"),
                StateKind::Kitten2 { .. } => (2, "kitten2"),
                _ => (4, "kitten4"),
            };
            let (cav, lost) = coherent_family(alpha, period, nf);
            check(name, lost)?;
            Ok(BuiltState { state: State::Pure(Ket::new(embed(&cav))?), leakage: lost })
        }
        StateKind::Thermal { n_bar } => {
            if *n_bar < 0.0 {
                return Err(Error::Invalid("thermal occupation must be non-negative".into()));
            }
            let ratio = n_bar / (n_bar + 1.0);
            let lost = ratio.powi(nf as i32);
            check("thermal", lost)?;
            let mut mat = CMat::zeros(layout.dim(), layout.dim());
            let mut p = 1.0 / (n_bar + 1.0);
            let norm = 1.0 - lost;
            for n in 0..nf {
                let i = layout.index(n, 0);
                mat[(i, i)] = c(p / norm, 0.0);
                p *= ratio;
            }
            Ok(BuiltState { state: State::Mixed(DensityMatrix::from_matrix_unchecked(mat)), leakage: lost })
        }
        StateKind::Gkp { delta } => {
            if *delta <= 0.0 {
                return Err(Error::Invalid("grid-state width must be positive".into()));
            }
            let ext = (nf + (40.0 / (2.0 * delta * delta)).ceil() as usize).min(nf.max(6000));
            let full = gkp_amplitudes(*delta, ext);
            let total: f64 = full.iter().map(|x| x * x).sum();
            let kept: f64 = full[..nf].iter().map(|x| x * x).sum();
            let lost = ((total - kept) / total).max(0.0);
            check("gkp", lost)?;
            let cav: Vec<C64> = full[..nf].iter().map(|&x| c(x, 0.0)).collect();
            Ok(BuiltState { state: State::Pure(Ket::new(embed(&cav))?), leakage: lost })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_temperature_thermal_is_vacuum() {
        let s = build_state(&StateKind::Thermal { n_bar: 0.0 }, HilbertLayout::cavity(4), 1e-6).unwrap();
        let rho = s.state.density();
        assert_eq!(rho.matrix()[(0, 0)], c(1.0, 0.0));
        assert_eq!(rho.matrix().trace(), c(1.0, 0.0));
    }

    #[test]
    fn kitten4_mean_photon_number() {
        let l = HilbertLayout::cavity(40);
        let s = build_state(&StateKind::Kitten4 { re: 3.0, im: 0.0 }, l, 1e-6).unwrap();
        let k = s.state.as_ket().unwrap();
        let nbar: f64 = (0..40).map(|n| n as f64 * k.amplitudes()[(n, 0)].norm_sqr()).sum();
        // exact: x (sinh x - sin x)/(cosh x + cos x) for x = 9
        let x: f64 = 9.0;
        let exact = x * (x.sinh() - x.sin()) / (x.cosh() + x.cos());
        assert!((nbar - exact).abs() < 1e-6);
        assert!((nbar - 9.0).abs() < 0.05);
    }

    #[test]
    fn leakage_error_reports_lost_norm() {
        let r = build_state(&StateKind::Coherent { re: 3.0, im: 0.0 }, HilbertLayout::cavity(10), 1e-6);
        match r {
            Err(Error::Truncation { lost, .. }) => assert!(lost > 1e-3),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn hermite_functions_orthonormal_on_grid() {
        let h = 0.01;
        let xs: Vec<f64> = (-1500..=1500).map(|i| i as f64 * h).collect();
        let tab: Vec<Vec<f64>> = xs.iter().map(|&x| hermite_functions(6, x)).collect();
        for m in 0..=6 {
            for n in 0..=6 {
                let s: f64 = tab.iter().map(|t| t[m] * t[n]).sum::<f64>() * h;
                let e = if m == n { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-9, "{m} {n} {s}");
            }
        }
    }

    #[test]
    fn hermite_large_argument_no_nan() {
        let h = hermite_functions(2000, 60.0);
        assert!(h.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn density_validation() {
        let bad = CMat::from_real(2, 2, &[0.5, 0.2, 0.0, 0.5]);
        assert!(DensityMatrix::new(bad).is_err());
        let good = CMat::from_real(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert!(DensityMatrix::new(good).is_ok());
    }
}
