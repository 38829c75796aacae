// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Closed-form and constructive reference solutions.

use crate::controllers::{Controller, LookupTable, TableMode};
use crate::error::{Error, Result};
use crate::gates::{jc_interaction, jc_qubit_drive};
use crate::qcore::quadrature::normal_nodes;
use crate::qcore::{c, CMat, HilbertLayout, Ket, C64};
use std::f64::consts::PI;

/// Amplitudes below this are treated as zero by the recursion.
const LE_EPS: f64 = 1e-13;

/// Rotation `exp(−i(h)(cos φ A + sin φ B))` whose adjoint removes component
/// `v_k`, for a block with `A_{kk'} = 1` and `B_{kk'} = i·b`. Returns the
/// half angle `h` and the azimuth `φ`.
fn zeroing_rotation(vk: C64, vk1: C64, b: f64) -> (f64, f64) {
    if vk.norm() < LE_EPS {
        return (0.0, 0.0);
    }
    if vk1.norm() < LE_EPS {
        return (0.5 * PI, 0.0);
    }
    // cos h·v_k + i sin h·e^{ibφ}·v_k' = 0
    let z = c(0.0, 1.0) * vk / vk1;
    (z.norm().atan(), b * z.arg())
}

/// Controls `(α_j, β_j)` for `j = 1..=N` such that alternating qubit drives
/// and qubit–cavity exchanges take `|0,g>` to `target`.
///
/// Works backwards from the target: each exchange removes the top `|j,g>`
/// amplitude, each drive the `|j−1,e>` amplitude. Degenerate blocks get a
/// zero angle.
pub fn law_eberly_solve(layout: HilbertLayout, target: &Ket) -> Result<Vec<(C64, C64)>> {
    if layout.qubit_slots != 1 {
        return Err(Error::InvalidLayout("Law–Eberly needs one qubit slot".into()));
    }
    if target.dim() != layout.dim() {
        return Err(Error::DimMismatch("target does not match layout".into()));
    }
    let amps = target.amplitudes();
    let mut n_max = 0;
    for i in 0..layout.dim() {
        if amps[(i, 0)].norm() > LE_EPS {
            if layout.qubit_bit(i, 0) == 1 {
                return Err(Error::Invalid("target must leave the qubit in |g>".into()));
            }
            n_max = n_max.max(layout.fock_of(i));
        }
    }
    let mut psi = amps.clone();
    let mut seq = Vec::with_capacity(n_max);
    for j in (1..=n_max).rev() {
        let s = (j as f64).sqrt();
        let (h, phi) = zeroing_rotation(psi[(layout.index(j, 0), 0)], psi[(layout.index(j - 1, 1), 0)], -1.0);
        let beta = C64::from_polar(2.0 * h / s, phi);
        psi = jc_interaction(layout, 0, beta.re, beta.im).u.adjoint().matmul(&psi);
        let (h, phi) = zeroing_rotation(psi[(layout.index(j - 1, 1), 0)], psi[(layout.index(j - 1, 0), 0)], 1.0);
        let alpha = C64::from_polar(2.0 * h, phi);
        psi = jc_qubit_drive(layout, 0, alpha.re, alpha.im).u.adjoint().matmul(&psi);
        seq.push((alpha, beta));
    }
    seq.reverse();
    Ok(seq)
}

/// Apply a Law–Eberly sequence to `|0,g>`.
pub fn law_eberly_replay(layout: HilbertLayout, seq: &[(C64, C64)]) -> CMat {
    let mut psi = Ket::basis(layout.dim(), 0).amplitudes().clone();
    for &(a, b) in seq {
        psi = jc_qubit_drive(layout, 0, a.re, a.im).u.matmul(&psi);
        psi = jc_interaction(layout, 0, b.re, b.im).u.matmul(&psi);
    }
    psi
}

/// `(γ_j, δ_j)` of the period-doubling purification strategy after the
/// outcome indices `history` (index 1 is outcome −1).
///
/// `γ_j = π/2^j`; the phase makes outcome −1 exclude the residue class
/// `n_j mod 2^j`, where `n_j` has binary digits `d_{j−1}…d_1`.
pub fn purification_controls(history: &[usize]) -> (f64, f64) {
    let j = history.len() + 1;
    let n_j: usize = history.iter().enumerate().map(|(i, &d)| d << i).sum();
    let gamma = PI / (1u64 << j) as f64;
    let mut delta = -2.0 * PI * n_j as f64 / (1u64 << j) as f64;
    if delta <= -PI {
        delta += 2.0 * PI;
    }
    (gamma, delta)
}

/// The analytic strategy as a full lookup table over `J` measurements.
pub fn analytic_purification_strategy(j: usize) -> Result<(Controller, Vec<f64>)> {
    if j == 0 {
        return Err(Error::Invalid("purification needs at least one measurement".into()));
    }
    let table = LookupTable::new((0..j).collect(), 2, 2, TableMode::Full);
    let mut theta = vec![0.0; 2 * table.n_nodes()];
    for d in 0..j {
        for idx in 0..(1usize << d) {
            // history index is MSB-first: first outcome is the top bit
            let hist: Vec<usize> = (0..d).map(|k| (idx >> (d - 1 - k)) & 1).collect();
            let node = table.node_index(d, &hist)?.expect("full table has every node");
            let (g, dl) = purification_controls(&hist);
            theta[2 * node] = g;
            theta[2 * node + 1] = dl;
        }
    }
    Ok((Controller::Table(table), theta))
}

/// Measurement-averaged excitation probability for pulses `τ_j` on the
/// all-ground branch (zero pulses elsewhere) at coupling `g`.
pub fn spin_fidelity_closed_form(taus: &[f64], g: f64) -> f64 {
    let mut survive = 1.0;
    let mut total = 0.0;
    for &t in taus {
        let s = (0.5 * g * t).sin().powi(2);
        total += s * survive;
        survive *= 1.0 - s;
    }
    total
}

/// [`spin_fidelity_closed_form`] averaged over `g ~ Normal(mean, std)`.
pub fn spin_fidelity_averaged(taus: &[f64], mean: f64, std: f64, nodes: usize) -> f64 {
    normal_nodes(mean, std, nodes).iter().map(|&(g, w)| w * spin_fidelity_closed_form(taus, g)).sum()
}

/// Two-step fidelity with both second-pulse branches, `τ₁(+1)` following
/// outcome +1 (ground).
pub fn spin_fidelity_two_step(tau0: f64, tau1_plus: f64, tau1_minus: f64, g: f64) -> f64 {
    let s = |t: f64| (0.5 * g * t).sin().powi(2);
    let co = |t: f64| (0.5 * g * t).cos().powi(2);
    s(tau0) * co(tau1_minus) + co(tau0) * s(tau1_plus)
}

/// Fock-level survival `e^{−nκt}` under pure decay.
pub fn bare_decay_fock_fidelity(n: usize, kappa_t: f64) -> f64 {
    (-(n as f64) * kappa_t).exp()
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `<m|D(α)|n>` of the untruncated displacement for `m, n < cutoff`.
pub fn displacement_elements(cutoff: usize, alpha: C64) -> CMat {
    let x = alpha.norm_sqr();
    let mut out = CMat::zeros(cutoff, cutoff);
    for m in 0..cutoff {
        for n in 0..cutoff {
            let (lo, hi) = (m.min(n), m.max(n));
            let k = hi - lo;
            // generalized Laguerre L_lo^{(k)}(x)
            let (mut l0, mut l1) = (1.0, 1.0 + k as f64 - x);
            let lag = if lo == 0 {
                1.0
            } else {
                for i in 1..lo {
                    let next = ((2 * i + 1 + k) as f64 - x) * l1 - (i + k) as f64 * l0;
                    l0 = l1;
                    l1 = next / (i + 1) as f64;
                }
                l1
            };
            let mag = (0.5 * (ln_factorial(lo) - ln_factorial(hi)) - 0.5 * x).exp();
            let base = if m >= n { alpha } else { -alpha.conj() };
            out[(m, n)] = base.powu(k as u32) * (mag * lag);
        }
    }
    out
}

/// Largest amplification of the inverse envelope we accept.
const ENVELOPE_LIMIT: f64 = 1e8;

/// Hermitian part of `(Ŝ_x + Ŝ_p)/2` with `Ŝ = E D E⁻¹`, `E = exp(−Δ²n)`,
/// on the cavity of `layout` (identity on qubits).
pub fn gkp_stabilizer_observable(layout: HilbertLayout, delta: f64) -> Result<CMat> {
    let d = layout.fock_cutoff;
    let amp = (delta * delta * (d as f64 - 1.0)).exp();
    if !(amp <= ENVELOPE_LIMIT) {
        let max_cutoff = (ENVELOPE_LIMIT.ln() / (delta * delta)).floor() as usize + 1;
        return Err(Error::IllConditioned(format!(
            "inverse envelope amplifies by {amp:.2e} at cutoff {d}; Δ={delta} needs cutoff ≤ {max_cutoff}"
        )));
    }
    let s = PI.sqrt();
    let env: Vec<f64> = (0..d).map(|n| (-delta * delta * n as f64).exp()).collect();
    let mut total = CMat::zeros(d, d);
    for alpha in [c(s, 0.0), c(0.0, s)] {
        let disp = displacement_elements(d, alpha);
        let st = CMat::from_fn(d, d, |m, n| disp[(m, n)] * (env[m] / env[n]));
        total += &st;
        total += &st.adjoint();
    }
    Ok(layout.embed_cavity(&total.scale_real(0.25)))
}

/// `Re tr[ρ(Ŝ_x + Ŝ_p)]/2` on the cavity.
pub fn gkp_stabilizer_mean(rho: &CMat, layout: HilbertLayout, delta: f64) -> Result<f64> {
    let h = gkp_stabilizer_observable(layout, delta)?;
    Ok(h.trace_product(rho).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{build_state, StateKind, DEFAULT_LEAKAGE_TOL};

    fn fidelity(a: &CMat, b: &CMat) -> f64 {
        a.adjoint().matmul(b).as_scalar().norm_sqr()
    }

    #[test]
    fn law_eberly_examples() {
        let l = HilbertLayout::new(6, 1).unwrap();
        assert!(law_eberly_solve(l, &Ket::basis(l.dim(), 0)).unwrap().is_empty());
        let one = Ket::basis(l.dim(), l.index(1, 0));
        let seq = law_eberly_solve(l, &one).unwrap();
        assert_eq!(seq.len(), 1);
        assert!((seq[0].0.norm() - PI).abs() < 1e-12 && (seq[0].1.norm() - PI).abs() < 1e-12);
        for amps in [vec![(1, 1.0), (3, 1.0)], vec![(2, 1.0)], vec![(0, 0.3), (2, -0.5), (4, 0.8)]] {
            let t = build_state(&StateKind::Superposition { amplitudes: amps }, l, DEFAULT_LEAKAGE_TOL).unwrap();
            let k = t.state.as_ket().unwrap().clone();
            let seq = law_eberly_solve(l, &k).unwrap();
            let f = fidelity(&law_eberly_replay(l, &seq), k.amplitudes());
            assert!(1.0 - f < 1e-10, "{f}");
        }
    }

    #[test]
    fn law_eberly_complex_target() {
        let l = HilbertLayout::new(5, 1).unwrap();
        let mut v = vec![c(0.0, 0.0); l.dim()];
        v[l.index(1, 0)] = c(0.4, 0.2);
        v[l.index(2, 0)] = c(-0.1, 0.7);
        v[l.index(3, 0)] = c(0.3, -0.3);
        let k = Ket::new(v).unwrap();
        let seq = law_eberly_solve(l, &k).unwrap();
        assert!(1.0 - fidelity(&law_eberly_replay(l, &seq), k.amplitudes()) < 1e-10);
    }

    #[test]
    fn purification_controls_follow_period_doubling() {
        assert_eq!(purification_controls(&[]), (PI / 2.0, 0.0));
        // the digits d_1 = d_2 = 1 give n_3 = 3
        let (g, d) = purification_controls(&[1, 1]);
        assert!((g - PI / 8.0).abs() < 1e-15);
        let phase = g * 3.0 + 0.5 * d;
        assert!(phase.sin().abs() < 1e-12);
    }

    #[test]
    fn purification_postselects_residue_classes() {
        for jm in 1..=4 {
            let modulus = 1usize << jm;
            for idx in 0..modulus {
                let hist: Vec<usize> = (0..jm).map(|k| (idx >> (jm - 1 - k)) & 1).collect();
                let mut pops: Vec<f64> = (0..40).map(|n| (2.0f64 / 3.0).powi(n) / 3.0).collect();
                for j in 0..jm {
                    let (g, d) = purification_controls(&hist[..j]);
                    for (n, p) in pops.iter_mut().enumerate() {
                        let ph = g * n as f64 + 0.5 * d;
                        *p *= if hist[j] == 0 { ph.cos().powi(2) } else { ph.sin().powi(2) };
                    }
                }
                let classes: std::collections::BTreeSet<usize> =
                    pops.iter().enumerate().filter(|(_, &p)| p > 1e-20).map(|(n, _)| n % modulus).collect();
                assert_eq!(classes.len(), 1, "history {hist:?} keeps {classes:?}");
            }
        }
    }

    #[test]
    fn spin_closed_form_examples() {
        assert!((spin_fidelity_closed_form(&[PI], 1.0) - 1.0).abs() < 1e-15);
        for &(a, b) in &[(0.3, 1.2), (2.0, -0.7), (2.9, 3.1)] {
            let f = spin_fidelity_two_step(a, b, 0.0, 1.3);
            let g = spin_fidelity_two_step(b, a, 0.0, 1.3);
            assert!((f - g).abs() < 1e-14);
            assert!((f - spin_fidelity_closed_form(&[a, b], 1.3)).abs() < 1e-14);
        }
    }

    #[test]
    fn displacement_elements_are_unitary_in_the_bulk() {
        let d = displacement_elements(60, c(0.8, -0.5));
        for n in 0..10 {
            let col: f64 = (0..60).map(|m| d[(m, n)].norm_sqr()).sum();
            assert!((col - 1.0).abs() < 1e-12, "{col}");
        }
        let e = d.adjoint().matmul(&d);
        assert!((e[(2, 5)]).norm() < 1e-12);
    }

    #[test]
    fn stabilizer_on_grid_state_and_vacuum() {
        let l = HilbertLayout::cavity(40);
        let gkp = build_state(&StateKind::Gkp { delta: 0.5 }, l, 1e-4).unwrap();
        let v = gkp_stabilizer_mean(gkp.state.density().matrix(), l, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-5, "{v}");
        let vac = Ket::basis(40, 0).to_density();
        let v0 = gkp_stabilizer_mean(vac.matrix(), l, 0.5).unwrap();
        assert!(v0 < 1.0);
        let h = gkp_stabilizer_observable(l, 0.5).unwrap();
        assert!(h.hermiticity_error() < 1e-12);
        assert!(matches!(gkp_stabilizer_observable(HilbertLayout::cavity(60), 1.0), Err(Error::IllConditioned(_))));
    }
}
