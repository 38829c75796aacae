// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Tape primitives for reparametrized continuous readout.

use crate::channels::ContinuousFamily;
use crate::graddiff::tape::CustomOp;
use crate::qcore::{c, CMat};
use std::sync::Arc;

/// `ρ ↦ p(m_k | ρ)` on the readout lattice, as a column.
#[derive(Debug)]
pub struct LatticeDensity {
    pub family: Arc<ContinuousFamily>,
}

impl LatticeDensity {
    pub fn forward(&self, rho: &CMat) -> CMat {
        let dens = self.family.lattice_density(self.family.populations(rho));
        CMat::real_column(&dens)
    }
}

impl CustomOp for LatticeDensity {
    fn name(&self) -> &'static str {
        "lattice_density"
    }

    fn backward(&self, inputs: &[&CMat], _output: &CMat, g: &CMat) -> Vec<CMat> {
        let fam = &self.family;
        let dim = inputs[0].rows();
        let mut acc = [0.0; 2];
        for (k, &m) in fam.lattice.iter().enumerate() {
            let gk = g[(k, 0)].re;
            acc[0] += gk * fam.noise_density(m - 1.0);
            acc[1] += gk * fam.noise_density(m + 1.0);
        }
        let d: Vec<f64> = (0..dim).map(|i| if fam.sigma_of(i) > 0.0 { acc[0] } else { acc[1] }).collect();
        vec![CMat::real_diag(&d)]
    }
}

/// `p ↦ m = F⁻¹(z)` for the normalized trapezoid CDF of `p` at a fixed `z`.
#[derive(Debug)]
pub struct InverseCdf {
    pub lattice: Arc<Vec<f64>>,
    pub z: f64,
}

impl InverseCdf {
    /// Returns `(m, segment, clamped)`.
    pub fn forward(&self, p: &CMat) -> (f64, usize, bool) {
        let dens: Vec<f64> = p.data().iter().map(|v| v.re).collect();
        let (cdf, _) = crate::channels::lattice_cdf(&self.lattice, &dens);
        crate::channels::inverse_cdf(&self.lattice, &cdf, self.z)
    }

    /// `∂m/∂p_i`; zero when clamped or on a flat segment.
    pub fn gradient(&self, p: &CMat) -> Vec<f64> {
        let x = &self.lattice;
        let n = x.len();
        let dens: Vec<f64> = p.data().iter().map(|v| v.re).collect();
        let mut t = vec![0.0; n];
        for k in 1..n {
            t[k] = t[k - 1] + 0.5 * (dens[k - 1] + dens[k]) * (x[k] - x[k - 1]);
        }
        let total = t[n - 1];
        let (_, s, clamped) = self.forward(p);
        let cs = t[s] / total;
        let cs1 = t[s + 1] / total;
        let dd = cs1 - cs;
        if clamped || self.z <= 0.0 || self.z >= 1.0 || !(dd > 0.0) {
            return vec![0.0; n];
        }
        let hs = x[s + 1] - x[s];
        // ∂T_k/∂p_i for the trapezoid sum
        let dt = |k: usize, i: usize| -> f64 {
            let mut v = 0.0;
            if i < k {
                v += 0.5 * (x[i + 1] - x[i]);
            }
            if i >= 1 && i <= k {
                v += 0.5 * (x[i] - x[i - 1]);
            }
            v
        };
        (0..n)
            .map(|i| {
                let dtot = dt(n - 1, i);
                let dcs = (dt(s, i) - cs * dtot) / total;
                let dcs1 = (dt(s + 1, i) - cs1 * dtot) / total;
                -hs * dcs / dd - hs * (self.z - cs) / (dd * dd) * (dcs1 - dcs)
            })
            .collect()
    }
}

impl CustomOp for InverseCdf {
    fn name(&self) -> &'static str {
        "inverse_cdf"
    }

    fn backward(&self, inputs: &[&CMat], _output: &CMat, g: &CMat) -> Vec<CMat> {
        let gm = g.as_scalar().re;
        let d = self.gradient(inputs[0]);
        vec![CMat::column(d.iter().map(|&v| c(gm * v, 0.0)).collect())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_gradient_matches_fd() {
        let lattice: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
        let dens: Vec<f64> =
            lattice.iter().map(|&m| 0.3 * (-(m - 1.0f64).powi(2)).exp() + 0.7 * (-(m + 1.0f64).powi(2) / 0.5).exp()).collect();
        for z in [0.05, 0.37, 0.5, 0.93] {
            let op = InverseCdf { lattice: Arc::new(lattice.clone()), z };
            let p = CMat::real_column(&dens);
            let g = op.gradient(&p);
            let (_, s0, _) = op.forward(&p);
            for i in [0, 3, 17, 20, 21, 40] {
                let h = 1e-7;
                let mut a = dens.clone();
                a[i] += h;
                let mut b = dens.clone();
                b[i] -= h;
                let (ma, sa, _) = op.forward(&CMat::real_column(&a));
                let (mb, sb, _) = op.forward(&CMat::real_column(&b));
                if sa != s0 || sb != s0 {
                    continue;
                }
                let num = (ma - mb) / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-6, "z={z} i={i}: {num} vs {}", g[i]);
            }
        }
    }
}
