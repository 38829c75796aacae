// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! State figures of merit and the Wigner function.

use super::eig::{eigh, sqrtm_psd};
use super::matrix::{c, CMat, C64};
use super::ops::HilbertLayout;
use super::states::{DensityMatrix, State};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fidelity of `rho` with `target`. A pure target gives `<ψ|ρ|ψ>`; a mixed
/// one gives the Uhlmann expression `(tr √(√σ ρ √σ))²`.
pub fn fidelity(rho: &DensityMatrix, target: &State) -> Result<f64> {
    if rho.dim() != target.dim() {
        return Err(Error::DimMismatch(format!("fidelity: {} vs {}", rho.dim(), target.dim())));
    }
    match target {
        State::Pure(k) => {
            let v = k.amplitudes();
            let f = v.adjoint().matmul(rho.matrix()).matmul(v).as_scalar().re;
            Ok(f.clamp(0.0, 1.0))
        }
        State::Mixed(sigma) => Ok(uhlmann(rho.matrix(), sigma.matrix()).clamp(0.0, 1.0)),
    }
}

fn uhlmann(rho: &CMat, sigma: &CMat) -> f64 {
    let s = sqrtm_psd(sigma);
    let inner = s.matmul(rho).matmul(&s);
    let e = eigh(&inner);
    // roundoff-level eigenvalues would be amplified by the square root
    let cut = 1e-13 * e.values.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let t: f64 = e.values.iter().map(|&x| if x > cut { x.sqrt() } else { 0.0 }).sum();
    t * t
}

/// `tr ρ²`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    m.trace_product(m).re
}

/// Rectangular phase-space grid, `x` and `p` in units where vacuum has
/// variance 1/2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl PhaseGrid {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self { x_min: -half_width, x_max: half_width, nx: n, p_min: -half_width, p_max: half_width, np: n }
    }

    pub fn xs(&self) -> Vec<f64> {
        axis(self.x_min, self.x_max, self.nx)
    }

    pub fn ps(&self) -> Vec<f64> {
        axis(self.p_min, self.p_max, self.np)
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Wigner function of the cavity state on the grid, `W[ip][ix]`. Qubit
/// factors are traced out first. Vacuum gives `W(0,0) = 1/π`.
pub fn wigner_grid(rho: &DensityMatrix, layout: HilbertLayout, grid: &PhaseGrid) -> Vec<Vec<f64>> {
    let r = layout.partial_trace_qubits(rho.matrix());
    let xs = grid.xs();
    let ps = grid.ps();
    ps.iter().map(|&p| xs.iter().map(|&x| wigner_point(&r, x, p)).collect()).collect()
}

/// Iterative evaluation at a single phase-space point.
fn wigner_point(rho: &CMat, x: f64, p: f64) -> f64 {
    let m_dim = rho.rows();
    let a = c(x, p) / 2f64.sqrt();
    let mut wl: Vec<C64> = vec![C64::new(0.0, 0.0); m_dim];
    wl[0] = c((-2.0 * a.norm_sqr()).exp() / std::f64::consts::PI, 0.0);
    let mut w = rho[(0, 0)].re * wl[0].re;
    for n in 1..m_dim {
        wl[n] = wl[n - 1] * a * 2.0 / (n as f64).sqrt();
        w += 2.0 * (rho[(0, n)] * wl[n]).re;
    }
    for m in 1..m_dim {
        let sm = (m as f64).sqrt();
        let mut temp = wl[m];
        wl[m] = (a.conj() * 2.0 * temp - wl[m - 1] * sm) / sm;
        w += (rho[(m, m)] * wl[m]).re;
        for n in (m + 1)..m_dim {
            let temp2 = (a * 2.0 * wl[n - 1] - temp * sm) / (n as f64).sqrt();
            temp = wl[n];
            wl[n] = temp2;
            w += 2.0 * (rho[(m, n)] * wl[n]).re;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::states::{build_state, Ket, StateKind};
    use std::f64::consts::PI;

    fn fock_dm(dim: usize, n: usize) -> DensityMatrix {
        Ket::basis(dim, n).to_density()
    }

    #[test]
    fn fidelity_examples() {
        let r0 = fock_dm(4, 0);
        assert!((fidelity(&r0, &State::Pure(Ket::basis(4, 0))).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity(&r0, &State::Pure(Ket::basis(4, 1))).unwrap().abs() < 1e-15);
        let th = build_state(&StateKind::Thermal { n_bar: 2.0 }, HilbertLayout::cavity(60), 1e-6).unwrap();
        let f = fidelity(&th.state.density(), &State::Pure(Ket::basis(60, 0))).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_target_agrees_with_pure_shortcut() {
        let l = HilbertLayout::cavity(6);
        let th = build_state(&StateKind::Thermal { n_bar: 0.7 }, l, 1e-2).unwrap().state.density();
        let k = Ket::new(vec![c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let f1 = fidelity(&th, &State::Pure(k.clone())).unwrap();
        let f2 = fidelity(&th, &State::Mixed(k.to_density())).unwrap();
        assert!((f1 - f2).abs() < 1e-10);
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&fock_dm(3, 1)) - 1.0).abs() < 1e-15);
        assert!((purity(&DensityMatrix::maximally_mixed(5)) - 0.2).abs() < 1e-15);
        let th = build_state(&StateKind::Thermal { n_bar: 2.0 }, HilbertLayout::cavity(80), 1e-6).unwrap();
        assert!((purity(&th.state.density()) - 0.2).abs() < 1e-9);
    }

    #[test]
    fn wigner_fock_origin_values() {
        let l = HilbertLayout::cavity(5);
        let g = PhaseGrid::square(0.0, 1);
        assert!((wigner_grid(&fock_dm(5, 0), l, &g)[0][0] - 1.0 / PI).abs() < 1e-14);
        assert!((wigner_grid(&fock_dm(5, 1), l, &g)[0][0] + 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn wigner_coherent_gaussian() {
        let l = HilbertLayout::cavity(40);
        let alpha = c(1.0, -0.5);
        let s = build_state(&StateKind::Coherent { re: alpha.re, im: alpha.im }, l, 1e-10).unwrap();
        let rho = s.state.density();
        let g = PhaseGrid::square(3.0, 7);
        let w = wigner_grid(&rho, l, &g);
        for (ip, &p) in g.ps().iter().enumerate() {
            for (ix, &x) in g.xs().iter().enumerate() {
                let x0 = 2f64.sqrt() * alpha.re;
                let p0 = 2f64.sqrt() * alpha.im;
                let e = (-(x - x0).powi(2) - (p - p0).powi(2)).exp() / PI;
                assert!((w[ip][ix] - e).abs() < 1e-10);
            }
        }
    }
}
