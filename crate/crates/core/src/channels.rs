// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Trajectory-level dynamics: unitaries, cavity decay, discrete POVM
//! measurements and reparametrized continuous readout.

use crate::error::{Error, Result};
use crate::qcore::{build_operators, CMat, DensityMatrix, HilbertLayout, Ket, State, C64};
use std::sync::Arc;

/// Probability below which a discrete outcome is treated as impossible.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest κ·dt per Runge–Kutta substep under the default sizing rule.
pub const MAX_KAPPA_DT: f64 = 0.05;

/// Dissipative interval of dimensionless length `κt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DissipationSpec {
    pub kappa_t: f64,
    pub rk4_steps: usize,
}

impl DissipationSpec {
    /// Step count from the sizing rule `κ·dt ≤ 0.05`.
    pub fn new(kappa_t: f64) -> Self {
        let steps = ((kappa_t / MAX_KAPPA_DT).ceil() as usize).max(1);
        Self { kappa_t, rk4_steps: steps }
    }

    pub fn with_steps(kappa_t: f64, rk4_steps: usize) -> Result<Self> {
        if kappa_t < 0.0 || rk4_steps == 0 {
            return Err(Error::Invalid(format!("bad dissipation spec κt={kappa_t}, steps={rk4_steps}")));
        }
        Ok(Self { kappa_t, rk4_steps })
    }
}

/// Generator of cavity decay `L(ρ) = aρa† − ½{n, ρ}` on a layout.
#[derive(Clone, Debug)]
pub struct Lindblad {
    a: CMat,
    adag: CMat,
    n: CMat,
}

impl Lindblad {
    pub fn new(layout: HilbertLayout) -> Result<Self> {
        let ops = build_operators(layout)?;
        Ok(Self { a: ops.a, adag: ops.adag, n: ops.n })
    }

    fn generator(&self, x: &CMat) -> CMat {
        let mut out = self.a.matmul(x).matmul(&self.adag);
        let anti = &self.n.matmul(x) + &x.matmul(&self.n);
        out.axpy(C64::new(-0.5, 0.0), &anti);
        out
    }

    /// Hilbert–Schmidt adjoint `L†(G) = a†Ga − ½{n, G}`.
    fn generator_adjoint(&self, g: &CMat) -> CMat {
        let mut out = self.adag.matmul(g).matmul(&self.a);
        let anti = &self.n.matmul(g) + &g.matmul(&self.n);
        out.axpy(C64::new(-0.5, 0.0), &anti);
        out
    }

    fn rk4(&self, x: &CMat, spec: DissipationSpec, adjoint: bool) -> CMat {
        if spec.kappa_t == 0.0 {
            return x.clone();
        }
        let h = spec.kappa_t / spec.rk4_steps as f64;
        let f = |y: &CMat| if adjoint { self.generator_adjoint(y) } else { self.generator(y) };
        let mut y = x.clone();
        for _ in 0..spec.rk4_steps {
            let k1 = f(&y);
            let mut t = y.clone();
            t.axpy(C64::new(0.5 * h, 0.0), &k1);
            let k2 = f(&t);
            let mut t = y.clone();
            t.axpy(C64::new(0.5 * h, 0.0), &k2);
            let k3 = f(&t);
            let mut t = y.clone();
            t.axpy(C64::new(h, 0.0), &k3);
            let k4 = f(&t);
            y.axpy(C64::new(h / 6.0, 0.0), &k1);
            y.axpy(C64::new(h / 3.0, 0.0), &k2);
            y.axpy(C64::new(h / 3.0, 0.0), &k3);
            y.axpy(C64::new(h / 6.0, 0.0), &k4);
        }
        y
    }

    /// Propagate an operator (not necessarily a state) forward.
    pub fn propagate(&self, x: &CMat, spec: DissipationSpec) -> CMat {
        self.rk4(x, spec, false)
    }

    /// Adjoint of [`Lindblad::propagate`] with respect to `Re tr(G^H X)`.
    /// The Runge–Kutta step is a polynomial in `L`, so its adjoint is the
    /// same polynomial in `L†`.
    pub fn propagate_adjoint(&self, g: &CMat, spec: DissipationSpec) -> CMat {
        self.rk4(g, spec, true)
    }
}

/// Evolve `ρ` under cavity decay for the interval in `spec`.
pub fn lindblad_rk4(rho: &DensityMatrix, spec: DissipationSpec, lindblad: &Lindblad) -> DensityMatrix {
    let mut out = lindblad.propagate(rho.matrix(), spec);
    // restore exact Hermiticity lost to roundoff
    let adj = out.adjoint();
    out = (&out + &adj).scale_real(0.5);
    DensityMatrix::from_matrix_unchecked(out)
}

fn check_unitary(u: &CMat, dim: usize) -> Result<()> {
    if u.shape() != (dim, dim) {
        return Err(Error::DimMismatch(format!("unitary {:?} on dim {dim}", u.shape())));
    }
    let err = u.unitarity_error();
    if err > 1e-8 {
        return Err(Error::Contract(format!("operator not unitary (error {err:.2e})")));
    }
    Ok(())
}

/// `UρU†`.
pub fn apply_unitary(rho: &DensityMatrix, u: &CMat) -> Result<DensityMatrix> {
    check_unitary(u, rho.dim())?;
    Ok(DensityMatrix::from_matrix_unchecked(u.sandwich(rho.matrix())))
}

/// `U|ψ>`.
pub fn apply_unitary_ket(psi: &Ket, u: &CMat) -> Result<Ket> {
    check_unitary(u, psi.dim())?;
    Ket::new(u.matmul(psi.amplitudes()).into_data())
}

/// Discrete family: labelled measurement operators in declared order.
#[derive(Clone, Debug)]
pub struct DiscreteFamily {
    pub labels: Vec<i32>,
    pub ops: Vec<CMat>,
}

/// Qubit readout `m = σ + ξ` with Gaussian noise, sampled on a lattice.
#[derive(Clone, Debug)]
pub struct ContinuousFamily {
    pub layout: HilbertLayout,
    pub slot: usize,
    pub lattice: Vec<f64>,
    pub noise_std: f64,
}

/// An indexed set of measurement operators.
#[derive(Clone, Debug)]
pub enum MeasurementFamily {
    Discrete(DiscreteFamily),
    Continuous(ContinuousFamily),
}

impl MeasurementFamily {
    /// Checks completeness `Σ M†M = I` to 1e-10.
    pub fn discrete(labels: Vec<i32>, ops: Vec<CMat>) -> Result<Self> {
        if labels.len() != ops.len() || ops.is_empty() {
            return Err(Error::Invalid("labels and operators must match and be non-empty".into()));
        }
        let dim = ops[0].rows();
        let mut sum = CMat::zeros(dim, dim);
        for m in &ops {
            sum += &m.adjoint().matmul(m);
        }
        let err = sum.max_abs_diff(&CMat::identity(dim));
        if err > 1e-10 {
            return Err(Error::Contract(format!("measurement family not complete (error {err:.2e})")));
        }
        Ok(MeasurementFamily::Discrete(DiscreteFamily { labels, ops }))
    }

    /// Default lattice of 401 points on [−6, 6].
    pub fn qubit_readout(layout: HilbertLayout, slot: usize, noise_std: f64) -> Result<Self> {
        Self::qubit_readout_lattice(layout, slot, noise_std, -6.0, 6.0, 401)
    }

    pub fn qubit_readout_lattice(
        layout: HilbertLayout,
        slot: usize,
        noise_std: f64,
        lo: f64,
        hi: f64,
        points: usize,
    ) -> Result<Self> {
        if slot >= layout.qubit_slots || points < 2 || !(hi > lo) || !(noise_std > 0.0) {
            return Err(Error::Invalid("bad continuous readout specification".into()));
        }
        let lattice: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
        let fam = ContinuousFamily { layout, slot, lattice, noise_std };
        let h = fam.lattice[1] - fam.lattice[0];
        for sigma in [1.0, -1.0] {
            let s: f64 = fam.lattice.iter().map(|&m| fam.noise_density(m - sigma)).sum::<f64>() * h;
            if (s - 1.0).abs() > 1e-4 {
                return Err(Error::Contract(format!("lattice completeness error {:.2e}", (s - 1.0).abs())));
            }
        }
        Ok(MeasurementFamily::Continuous(fam))
    }
}

impl ContinuousFamily {
    pub fn noise_density(&self, xi: f64) -> f64 {
        let s = self.noise_std;
        (-0.5 * xi * xi / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn noise_density_derivative(&self, xi: f64) -> f64 {
        -xi / (self.noise_std * self.noise_std) * self.noise_density(xi)
    }

    /// Eigenvalue σ = ±1 of each basis index on the read-out slot.
    pub fn sigma_of(&self, idx: usize) -> f64 {
        if self.layout.qubit_bit(idx, self.slot) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Populations of σ = +1 and σ = −1.
    pub fn populations(&self, rho: &CMat) -> [f64; 2] {
        let mut pop = [0.0; 2];
        for i in 0..rho.rows() {
            let k = if self.sigma_of(i) > 0.0 { 0 } else { 1 };
            pop[k] += rho[(i, i)].re;
        }
        pop
    }

    /// `p(m_n | ρ)` on the lattice.
    pub fn lattice_density(&self, pop: [f64; 2]) -> Vec<f64> {
        self.lattice
            .iter()
            .map(|&m| pop[0] * self.noise_density(m - 1.0) + pop[1] * self.noise_density(m + 1.0))
            .collect()
    }

    /// Diagonal Kraus operator `Σ_σ √q(m−σ) |σ><σ|`.
    pub fn kraus(&self, m: f64) -> CMat {
        let d: Vec<f64> = (0..self.layout.dim()).map(|i| self.noise_density(m - self.sigma_of(i)).sqrt()).collect();
        CMat::real_diag(&d)
    }

    /// Derivative of [`ContinuousFamily::kraus`] with respect to `m`.
    pub fn kraus_derivative(&self, m: f64) -> CMat {
        let d: Vec<f64> = (0..self.layout.dim())
            .map(|i| {
                let xi = m - self.sigma_of(i);
                let q = self.noise_density(xi);
                if q > 0.0 {
                    0.5 * self.noise_density_derivative(xi) / q.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        CMat::real_diag(&d)
    }
}

/// Normalized trapezoid CDF on a lattice, with the unnormalized total.
pub fn lattice_cdf(lattice: &[f64], density: &[f64]) -> (Vec<f64>, f64) {
    let mut cum = vec![0.0; lattice.len()];
    for k in 1..lattice.len() {
        cum[k] = cum[k - 1] + 0.5 * (density[k - 1] + density[k]) * (lattice[k] - lattice[k - 1]);
    }
    let total = *cum.last().unwrap_or(&0.0);
    if total > 0.0 {
        for x in cum.iter_mut() {
            *x /= total;
        }
    }
    (cum, total)
}

/// Piecewise-linear inverse CDF. Returns `(m, segment index, clamped)`.
/// A `z` exactly on a lattice CDF value resolves to the left segment.
pub fn inverse_cdf(lattice: &[f64], cdf: &[f64], z: f64) -> (f64, usize, bool) {
    let n = lattice.len();
    if z <= 0.0 {
        return (lattice[0], 0, z < 0.0);
    }
    if z >= 1.0 {
        return (lattice[n - 1], n - 2, z > 1.0);
    }
    // first segment whose right end reaches z
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cdf[mid] >= z {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut seg = lo;
    while seg + 1 < n && cdf[seg + 1] - cdf[seg] <= 0.0 {
        seg += 1;
    }
    let seg = seg.min(n - 2);
    let df = cdf[seg + 1] - cdf[seg];
    let m = if df > 0.0 {
        lattice[seg] + (lattice[seg + 1] - lattice[seg]) * (z - cdf[seg]) / df
    } else {
        lattice[seg]
    };
    (m, seg, false)
}

/// Measurement outcome label.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Outcome {
    Discrete(i32),
    Continuous(f64),
}

/// Result of one measurement.
#[derive(Clone, Debug)]
pub struct MeasurementEvent {
    pub outcome: Outcome,
    /// Probability (discrete) or density (continuous) of the outcome.
    pub probability: f64,
    pub log_prob: f64,
    pub post_state: DensityMatrix,
    pub warning: Option<String>,
}

/// Outcome probabilities `tr(M ρ M†)` in declared order.
pub fn outcome_probabilities(rho: &CMat, fam: &DiscreteFamily) -> Vec<f64> {
    fam.ops.iter().map(|m| m.sandwich(rho).trace().re.max(0.0)).collect()
}

/// Sample a discrete outcome with the uniform draw `u` by inverse CDF over
/// the declared order; outcomes below [`PROB_FLOOR`] are excluded.
pub fn measure_discrete(rho: &DensityMatrix, family: &MeasurementFamily, u: f64) -> Result<MeasurementEvent> {
    let fam = match family {
        MeasurementFamily::Discrete(f) => f,
        MeasurementFamily::Continuous(_) => {
            return Err(Error::Invalid("measure_discrete needs a discrete family".into()))
        }
    };
    let raw = outcome_probabilities(rho.matrix(), fam);
    let (k, warning) = sample_index(&raw, u)?;
    let m = &fam.ops[k];
    let unnorm = m.sandwich(rho.matrix());
    let p = raw[k];
    Ok(MeasurementEvent {
        outcome: Outcome::Discrete(fam.labels[k]),
        probability: p,
        log_prob: p.ln(),
        post_state: DensityMatrix::from_matrix_unchecked(unnorm.scale_real(1.0 / p)),
        warning,
    })
}

/// Index sampled from `probs` by inverse CDF with floor exclusion.
pub fn sample_index(probs: &[f64], u: f64) -> Result<(usize, Option<String>)> {
    let total: f64 = probs.iter().filter(|&&p| p >= PROB_FLOOR).sum();
    if !(total > 0.0) {
        return Err(Error::Contract("all outcome probabilities below floor".into()));
    }
    let target = u * total;
    let mut cum = 0.0;
    let mut chosen = None;
    let mut last_ok = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p < PROB_FLOOR {
            continue;
        }
        last_ok = k;
        cum += p;
        if target <= cum {
            chosen = Some(k);
            break;
        }
    }
    let k = chosen.unwrap_or(last_ok);
    // report when the unfloored sampling would have hit an excluded outcome
    let mut raw_cum = 0.0;
    let mut warning = None;
    let raw_total: f64 = probs.iter().sum();
    for (j, &p) in probs.iter().enumerate() {
        raw_cum += p;
        if u * raw_total <= raw_cum {
            if p < PROB_FLOOR && p > 0.0 {
                warning = Some(format!("outcome index {j} with probability {p:.1e} excluded; resampled"));
            }
            break;
        }
    }
    Ok((k, warning))
}

/// Sample a continuous outcome by the reparametrization `m = F⁻¹(z)`.
pub fn measure_continuous_reparam(rho: &DensityMatrix, family: &MeasurementFamily, z: f64) -> Result<MeasurementEvent> {
    let fam = match family {
        MeasurementFamily::Continuous(f) => f,
        MeasurementFamily::Discrete(_) => {
            return Err(Error::Invalid("measure_continuous_reparam needs a continuous family".into()))
        }
    };
    let pop = fam.populations(rho.matrix());
    let dens = fam.lattice_density(pop);
    let (cdf, total) = lattice_cdf(&fam.lattice, &dens);
    if total < 1.0 - 1e-6 {
        return Err(Error::Contract(format!("lattice covers only {total:.8} of the density mass")));
    }
    let (m, _, clamped) = inverse_cdf(&fam.lattice, &cdf, z);
    let warning = if clamped { Some(format!("draw {z} outside [0, 1]; clamped to lattice edge")) } else { None };
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let k = fam.kraus(m);
    let unnorm = k.sandwich(rho.matrix());
    let p = unnorm.trace().re;
    if !(p > 0.0) {
        return Err(Error::Contract("zero density at sampled outcome".into()));
    }
    Ok(MeasurementEvent {
        outcome: Outcome::Continuous(m),
        probability: p,
        log_prob: p.ln(),
        post_state: DensityMatrix::from_matrix_unchecked(unnorm.scale_real(1.0 / p)),
        warning,
    })
}

/// Element of a numeric step plan.
#[derive(Clone, Debug)]
pub enum PlanItem {
    Unitary(CMat),
    Dissipation(Arc<Lindblad>, DissipationSpec),
    Measurement(MeasurementFamily),
    /// Records the fidelity with the given target as a reward.
    RewardTap(State),
}

/// Apply plan items in order. `draw` supplies uniform numbers for
/// measurements. Returns the final state along with events and rewards.
pub fn trajectory_step(
    rho: &DensityMatrix,
    plan: &[PlanItem],
    draw: &mut dyn FnMut() -> f64,
) -> Result<(DensityMatrix, Vec<MeasurementEvent>, Vec<f64>)> {
    let mut state = rho.clone();
    let mut events = Vec::new();
    let mut rewards = Vec::new();
    for item in plan {
        match item {
            PlanItem::Unitary(u) => state = apply_unitary(&state, u)?,
            PlanItem::Dissipation(lb, spec) => state = lindblad_rk4(&state, *spec, lb),
            PlanItem::Measurement(fam) => {
                let u = draw();
                let ev = match fam {
                    MeasurementFamily::Discrete(_) => measure_discrete(&state, fam, u)?,
                    MeasurementFamily::Continuous(_) => measure_continuous_reparam(&state, fam, u)?,
                };
                state = ev.post_state.clone();
                events.push(ev);
            }
            PlanItem::RewardTap(target) => rewards.push(crate::qcore::fidelity(&state, target)?),
        }
    }
    Ok((state, events, rewards))
}
