// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Gradient of the surrogate from the evolution equations for `∂ρ`,
//! independent of the tape.
//!
//! Two formulations are provided. The forward one propagates `∂ρ/∂u` for
//! each control `u` with the normalized measurement update
//! `∂ρ⁺ = M∂ρM†/P − ρ⁺ tr[M∂ρM†]/P`. The backward one evolves adjoint
//! operators against the dynamics: `λ` for rewards on normalized states,
//! and `σ̃` for the log-likelihood terms on unnormalized states, where each
//! measurement simply maps `σ̃ ↦ M†σ̃M`.
//!
//! Controls must not depend on the state; the map from θ to controls is
//! differentiated on a small controller-only tape.

use super::program::{Ctl, Op, Program, RewardObs};
use super::record::Draw;
use super::tape::{NodeId, Tape};
use crate::channels::{DissipationSpec, Lindblad};
use crate::controllers::{Carry, Controller, DecisionInput};
use crate::error::{Error, Result};
use crate::gates::{dispersive_povm, displacement, jc_interaction, jc_qubit_drive, snap, spin_rotation};
use crate::qcore::{c, CMat};
use std::collections::HashMap;
use std::sync::Arc;

/// Which formulation to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMode {
    Backward,
    Forward,
}

/// One control-dependent step with concrete matrices.
enum Step {
    Unitary { u: CMat, derivs: Vec<(NodeId, CMat)> },
    Measure { m: CMat, derivs: Vec<(NodeId, CMat)>, coeff: f64 },
    Dissipate { lb: Arc<Lindblad>, spec: DissipationSpec },
    Reward { obs: RewardObs, weight: f64 },
}

/// Resolve controls and matrices along the fixed outcome record.
fn unroll(
    program: &Program,
    controller: &Controller,
    tape: &mut Tape,
    theta: &[f64],
    draws: &[Draw],
    coupling: f64,
    coefficients: &[f64],
) -> Result<Vec<Step>> {
    if controller.is_state_dependent() {
        return Err(Error::Unsupported("adjoint backend needs state-independent controls".into()));
    }
    let mut bound = controller.bind(tape, theta)?;
    let mut carry = Carry::default();
    let layout = program.layout;
    let n_dec = program.n_decisions();
    let mut controls: Vec<NodeId> = Vec::new();
    let mut history: Vec<usize> = Vec::new();
    let mut last = 0.0;
    let mut decision = 0;
    let mut meas = 0;
    let mut steps = Vec::new();
    for op in &program.ops {
        let val = |tape: &Tape, controls: &[NodeId], ctl: Ctl| -> (f64, Option<NodeId>) {
            match ctl {
                Ctl::Fixed(x) => (x, None),
                Ctl::Control(k) => (tape.scalar(controls[k]), Some(controls[k])),
            }
        };
        let tag = |ids: &[Option<NodeId>], ds: Vec<CMat>| -> Vec<(NodeId, CMat)> {
            ids.iter().zip(ds).filter_map(|(id, d)| id.map(|i| (i, d))).collect()
        };
        match op {
            Op::Decide => {
                let input = DecisionInput { index: decision, n_decisions: n_dec, history: &history, last_outcome: last, rho: None };
                controls = controller.decide(&mut bound, tape, theta, &mut carry, &input, None)?;
                decision += 1;
            }
            Op::QubitDrive { slot, re, im } | Op::JcInteraction { slot, re, im } => {
                let (x, ix) = val(tape, &controls, *re);
                let (y, iy) = val(tape, &controls, *im);
                let g = if matches!(op, Op::QubitDrive { .. }) {
                    jc_qubit_drive(layout, *slot, x, y)
                } else {
                    jc_interaction(layout, *slot, x, y)
                };
                steps.push(Step::Unitary { u: g.u, derivs: tag(&[ix, iy], g.derivs) });
            }
            Op::SnapBlock { re, im, phases } => {
                let cache = program
                    .displacement
                    .as_ref()
                    .ok_or_else(|| Error::Contract("program lacks a displacement cache".into()))?;
                let (x, ix) = val(tape, &controls, *re);
                let (y, iy) = val(tape, &controls, *im);
                let d = displacement(cache, x, y);
                let ph: Vec<(f64, Option<NodeId>)> = phases.iter().map(|&p| val(tape, &controls, p)).collect();
                let s = snap(layout, &ph.iter().map(|p| p.0).collect::<Vec<_>>())?;
                let dd = d.u.adjoint();
                let sd = s.u.matmul(&dd);
                let ds = d.u.matmul(&s.u);
                let u = d.u.matmul(&sd);
                let mut derivs = Vec::new();
                for (id, dk) in [(ix, &d.derivs[0]), (iy, &d.derivs[1])] {
                    if let Some(id) = id {
                        derivs.push((id, &dk.matmul(&sd) + &ds.matmul(&dk.adjoint())));
                    }
                }
                for ((_, id), dk) in ph.iter().zip(&s.derivs) {
                    if let Some(id) = id {
                        derivs.push((*id, d.u.matmul(dk).matmul(&dd)));
                    }
                }
                steps.push(Step::Unitary { u, derivs });
            }
            Op::SpinRotation { tau } => {
                let (t, it) = val(tape, &controls, *tau);
                let g = spin_rotation(coupling, t);
                steps.push(Step::Unitary { u: g.u, derivs: tag(&[it], g.derivs) });
            }
            Op::DispersiveMeasure { .. } | Op::MeasureZ { .. } => {
                let k = match draws.get(meas) {
                    Some(Draw::Index(k)) if *k < 2 => *k,
                    other => return Err(Error::Contract(format!("draw {meas} is {other:?}, expected an index"))),
                };
                let (m, derivs) = match op {
                    Op::DispersiveMeasure { gamma, delta } => {
                        let (gv, ig) = val(tape, &controls, *gamma);
                        let (dv, id) = val(tape, &controls, *delta);
                        let povm = dispersive_povm(layout, gv, dv);
                        let gate = if k == 0 { povm.plus } else { povm.minus };
                        (gate.u, tag(&[ig, id], gate.derivs))
                    }
                    Op::MeasureZ { slot } => {
                        let proj = if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
                        (layout.embed_qubit(*slot, &CMat::real_diag(&proj)), Vec::new())
                    }
                    _ => unreachable!("matched above"),
                };
                let coeff = coefficients.get(meas).copied().unwrap_or(0.0);
                steps.push(Step::Measure { m, derivs, coeff });
                history.push(k);
                last = if k == 0 { 1.0 } else { -1.0 };
                meas += 1;
            }
            Op::ContinuousReadout { .. } => {
                return Err(Error::Unsupported("adjoint backend with continuous readout".into()));
            }
            Op::Dissipate(spec) => {
                let lb = program
                    .lindblad
                    .clone()
                    .ok_or_else(|| Error::Contract("program lacks a Lindblad generator".into()))?;
                steps.push(Step::Dissipate { lb, spec: *spec });
            }
            Op::Reward { obs, weight } => steps.push(Step::Reward { obs: obs.clone(), weight: *weight }),
        }
    }
    Ok(steps)
}

/// `∂r/∂ρ` of a reward tap, as a Hermitian operator.
fn reward_gradient(obs: &RewardObs, rho: &CMat) -> CMat {
    match obs {
        RewardObs::Overlap(k) => CMat::outer(k, k),
        RewardObs::Purity => rho.scale_real(2.0),
        RewardObs::Expectation(h) => (**h).clone(),
    }
}

fn reward_value(obs: &RewardObs, rho: &CMat) -> f64 {
    match obs {
        RewardObs::Overlap(k) => k.adjoint().matmul(rho).matmul(k).as_scalar().re,
        RewardObs::Purity => rho.trace_product(rho).re,
        RewardObs::Expectation(h) => h.trace_product(rho).re,
    }
}

/// `2 Re tr(Λ dU ρ U†)`.
fn pair(lambda: &CMat, du: &CMat, rho: &CMat, u: &CMat) -> f64 {
    2.0 * lambda.trace_product(&du.matmul(rho).matmul(&u.adjoint())).re
}

/// Gradient of `Σ rewards + Σ_j A_j ln P(m_j)` along fixed outcomes, with
/// coefficients `A_j` held constant.
pub fn adjoint_gradient(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    draws: &[Draw],
    coupling: f64,
    coefficients: &[f64],
    mode: AdjointMode,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new(theta.len());
    let steps = unroll(program, controller, &mut tape, theta, draws, coupling, coefficients)?;
    let du = match mode {
        AdjointMode::Backward => backward_sweep(program, &steps)?,
        AdjointMode::Forward => forward_sweep(program, &steps)?,
    };
    let seeds: Vec<(NodeId, CMat)> = du.into_iter().map(|(id, g)| (id, CMat::real_scalar(g))).collect();
    tape.backward_seeded(&seeds)
}

/// Normalized states before each step plus the cumulative trace of the
/// unnormalized state.
fn forward_states(program: &Program, steps: &[Step]) -> Result<(Vec<CMat>, Vec<f64>, Vec<f64>)> {
    let mut rho = program.initial.clone();
    let mut cum = 1.0;
    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut cums = Vec::with_capacity(steps.len() + 1);
    let mut probs = Vec::with_capacity(steps.len());
    for s in steps {
        states.push(rho.clone());
        cums.push(cum);
        let mut p = 1.0;
        match s {
            Step::Unitary { u, .. } => rho = u.sandwich(&rho),
            Step::Dissipate { lb, spec } => rho = lb.propagate(&rho, *spec),
            Step::Measure { m, .. } => {
                let un = m.sandwich(&rho);
                p = un.trace().re;
                if !(p > 0.0) {
                    return Err(Error::Contract("forced outcome has zero probability".into()));
                }
                rho = un.scale_real(1.0 / p);
                cum *= p;
            }
            Step::Reward { .. } => {}
        }
        probs.push(p);
    }
    states.push(rho);
    cums.push(cum);
    Ok((states, cums, probs))
}

fn backward_sweep(program: &Program, steps: &[Step]) -> Result<HashMap<NodeId, f64>> {
    let (states, cums, probs) = forward_states(program, steps)?;
    let dim = program.layout.dim();
    let id = CMat::identity(dim);
    let mut lambda = CMat::zeros(dim, dim);
    let mut sigma = CMat::zeros(dim, dim);
    let mut grads: HashMap<NodeId, f64> = HashMap::new();
    // coefficient of the next measurement in time, for the telescoped seeds
    let mut next_coeff = 0.0;
    for (i, s) in steps.iter().enumerate().rev() {
        let rho = &states[i];
        let after = &states[i + 1];
        match s {
            Step::Reward { obs, weight } => {
                lambda.axpy(c(*weight, 0.0), &reward_gradient(obs, rho));
            }
            Step::Unitary { u, derivs } => {
                let rt = rho.scale_real(cums[i]);
                for (nid, du) in derivs {
                    *grads.entry(*nid).or_default() += pair(&lambda, du, rho, u) + pair(&sigma, du, &rt, u);
                }
                let ud = u.adjoint();
                lambda = ud.matmul(&lambda).matmul(u);
                sigma = ud.matmul(&sigma).matmul(u);
            }
            Step::Dissipate { lb, spec } => {
                lambda = lb.propagate_adjoint(&lambda, *spec);
                sigma = lb.propagate_adjoint(&sigma, *spec);
            }
            Step::Measure { m, derivs, coeff } => {
                sigma.axpy(c((coeff - next_coeff) / cums[i + 1], 0.0), &id);
                next_coeff = *coeff;
                let p = probs[i];
                let shift = lambda.trace_product(after).re;
                let mut mu = lambda.clone();
                mu.axpy(c(-shift, 0.0), &id);
                let mu = mu.scale_real(1.0 / p);
                let rt = rho.scale_real(cums[i]);
                for (nid, dm) in derivs {
                    *grads.entry(*nid).or_default() += pair(&mu, dm, rho, m) + pair(&sigma, dm, &rt, m);
                }
                let md = m.adjoint();
                lambda = md.matmul(&mu).matmul(m);
                sigma = md.matmul(&sigma).matmul(m);
            }
        }
    }
    Ok(grads)
}

fn forward_sweep(program: &Program, steps: &[Step]) -> Result<HashMap<NodeId, f64>> {
    let (states, _, probs) = forward_states(program, steps)?;
    let dim = program.layout.dim();
    let mut controls: Vec<NodeId> = Vec::new();
    for s in steps {
        if let Step::Unitary { derivs, .. } | Step::Measure { derivs, .. } = s {
            for (nid, _) in derivs {
                if !controls.contains(nid) {
                    controls.push(*nid);
                }
            }
        }
    }
    let mut grads = HashMap::new();
    for &target in &controls {
        let mut tau = CMat::zeros(dim, dim);
        let mut total = 0.0;
        for (i, s) in steps.iter().enumerate() {
            let rho = &states[i];
            match s {
                Step::Reward { obs, weight } => {
                    total += weight * reward_gradient(obs, rho).trace_product(&tau).re;
                }
                Step::Unitary { u, derivs } => {
                    let mut next = u.sandwich(&tau);
                    for (nid, du) in derivs {
                        if *nid == target {
                            let x = du.matmul(rho).matmul(&u.adjoint());
                            next += &x;
                            next += &x.adjoint();
                        }
                    }
                    tau = next;
                }
                Step::Dissipate { lb, spec } => tau = lb.propagate(&tau, *spec),
                Step::Measure { m, derivs, coeff } => {
                    let mut x = m.sandwich(&tau);
                    for (nid, dm) in derivs {
                        if *nid == target {
                            let y = dm.matmul(rho).matmul(&m.adjoint());
                            x += &y;
                            x += &y.adjoint();
                        }
                    }
                    let p = probs[i];
                    let tx = x.trace().re;
                    total += coeff * tx / p;
                    let mut next = x.scale_real(1.0 / p);
                    next.axpy(c(-tx / p, 0.0), &states[i + 1]);
                    tau = next;
                }
            }
        }
        grads.insert(target, total);
    }
    Ok(grads)
}

/// Sum of rewards along the fixed outcomes, for cross-checks.
pub fn replay_return(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    draws: &[Draw],
    coupling: f64,
) -> Result<f64> {
    let mut tape = Tape::new(theta.len());
    let steps = unroll(program, controller, &mut tape, theta, draws, coupling, &[])?;
    let (states, _, _) = forward_states(program, &steps)?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Step::Reward { obs, weight } => weight * reward_value(obs, &states[i]),
            _ => 0.0,
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graddiff::record::{forward_record, rel_error, CoefficientMode, OutcomeSource, RecordOptions};
    use crate::controllers::{GruNet, LookupTable, RnnInput, TableMode};
    use crate::qcore::{HilbertLayout, Ket};

    fn jc_program(with_dissipation: bool) -> Program {
        let l = HilbertLayout::new(4, 1).unwrap();
        let target = Arc::new(Ket::basis(8, l.index(1, 0)).amplitudes().clone());
        let mut ops = vec![Op::Decide];
        for _ in 0..2 {
            if with_dissipation {
                ops.push(Op::Dissipate(DissipationSpec::new(0.05)));
            }
            ops.push(Op::DispersiveMeasure { gamma: Ctl::Control(2), delta: Ctl::Control(3) });
            ops.push(Op::Decide);
            ops.push(Op::QubitDrive { slot: 0, re: Ctl::Control(0), im: Ctl::Fixed(0.0) });
            ops.push(Op::JcInteraction { slot: 0, re: Ctl::Control(1), im: Ctl::Fixed(0.0) });
            ops.push(Op::Reward { obs: RewardObs::Overlap(target.clone()), weight: 0.5 });
        }
        ops.push(Op::Reward { obs: RewardObs::Purity, weight: 0.25 });
        let mut rho = CMat::zeros(8, 8);
        for (n, p) in [(0, 0.5), (1, 0.3), (2, 0.2)] {
            rho[(l.index(n, 0), l.index(n, 0))] = c(p, 0.0);
        }
        Program::new(l, rho, ops, 4).unwrap()
    }

    #[test]
    fn three_routes_agree() {
        for diss in [false, true] {
            let p = jc_program(diss);
            for ctl in [
                Controller::Table(LookupTable::new(p.decision_depths(), 2, 4, TableMode::Full)),
                Controller::Gru(GruNet::new(vec![5], 4, RnnInput::Outcome)),
            ] {
                let th = ctl.init(2).values;
                for seed in 0..3 {
                    let r = forward_record(&p, &ctl, &th, OutcomeSource::Sample(seed), RecordOptions::default()).unwrap();
                    let coeffs = r.trajectory.coefficients(CoefficientMode::FutureReturn);
                    let tape_g = r.gradient(&coeffs).unwrap();
                    let t = &r.trajectory;
                    let bwd =
                        adjoint_gradient(&p, &ctl, &th, &t.draws, t.coupling, &coeffs, AdjointMode::Backward).unwrap();
                    let fwd =
                        adjoint_gradient(&p, &ctl, &th, &t.draws, t.coupling, &coeffs, AdjointMode::Forward).unwrap();
                    assert!(rel_error(&bwd, &tape_g) < 1e-10, "bwd {}", rel_error(&bwd, &tape_g));
                    assert!(rel_error(&fwd, &tape_g) < 1e-10, "fwd {}", rel_error(&fwd, &tape_g));
                    let ret = replay_return(&p, &ctl, &th, &t.draws, t.coupling).unwrap();
                    assert!((ret - t.ret).abs() < 1e-12);
                }
            }
        }
    }
}
