// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Recording programs on a tape: sampled trajectories with score terms,
//! replay with frozen outcomes, and exact enumeration of outcome branches.

use super::continuous::{InverseCdf, LatticeDensity};
use super::program::{Ctl, Op, Program, RewardObs};
use super::tape::{NodeId, RealFn, Tape};
use crate::channels::{sample_index, ContinuousFamily, MeasurementFamily, Outcome, PROB_FLOOR};
use crate::controllers::{Bound, Carry, Controller, DecisionInput};
use crate::error::{Error, Result};
use crate::gates::{dispersive_povm, displacement, jc_interaction, jc_qubit_drive, snap, spin_rotation};
use crate::qcore::quadrature::normal_nodes;
use crate::qcore::CMat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// Default cap on enumerated outcome branches.
pub const DEFAULT_BRANCH_CAP: usize = 4096;

/// Replayable record of one measurement draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Draw {
    /// Index of a discrete outcome.
    Index(usize),
    /// Uniform quantile fed to a continuous inverse CDF.
    Quantile(f64),
}

/// Where measurement outcomes come from.
#[derive(Clone, Copy, Debug)]
pub enum OutcomeSource<'a> {
    /// Fresh draws from a ChaCha stream with this seed.
    Sample(u64),
    /// Replay fixed draws at a fixed coupling.
    Forced { draws: &'a [Draw], coupling: f64 },
}

/// Coefficient multiplying each `ln P(m_j)` in the surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// Rewards collected after measurement `j`.
    FutureReturn,
    /// The whole return.
    FullReturn,
    /// No score term (biased, for comparison only).
    Uncorrected,
}

/// One sampled run.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub outcomes: Vec<Outcome>,
    /// Discrete outcome indices; continuous readings are not included.
    pub history: Vec<usize>,
    pub draws: Vec<Draw>,
    pub controls: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Rewards between consecutive measurements; entry `k` follows
    /// measurement `k` (entry 0 precedes the first).
    pub segment_rewards: Vec<f64>,
    pub ret: f64,
    pub log_prob: f64,
    #[serde(skip)]
    pub final_state: CMat,
    pub coupling: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn n_measurements(&self) -> usize {
        self.segment_rewards.len() - 1
    }

    /// Coefficients for measurements `1..=J`.
    pub fn coefficients(&self, mode: CoefficientMode) -> Vec<f64> {
        let j = self.n_measurements();
        match mode {
            CoefficientMode::FullReturn => vec![self.ret; j],
            CoefficientMode::Uncorrected => vec![0.0; j],
            CoefficientMode::FutureReturn => {
                let mut out = vec![0.0; j];
                let mut acc = 0.0;
                for k in (1..=j).rev() {
                    acc += self.segment_rewards[k];
                    out[k - 1] = acc;
                }
                out
            }
        }
    }
}

/// The pieces of `R + Σ_j detach(A_j) ln P(m_j)`.
#[derive(Clone, Debug)]
pub struct SurrogateScalar {
    pub value: f64,
    pub reward_nodes: Vec<NodeId>,
    /// `(A_j, ln P node)` for each discrete measurement.
    pub score_terms: Vec<(f64, NodeId)>,
}

/// A recorded trajectory with its tape.
#[derive(Debug)]
pub struct Recorded {
    pub trajectory: Trajectory,
    pub tape: Tape,
    pub reward_nodes: Vec<NodeId>,
    /// `ln P(m_j)` per measurement; `None` for reparametrized readouts.
    pub log_prob_nodes: Vec<Option<NodeId>>,
}

impl Recorded {
    pub fn surrogate(&self, coefficients: &[f64]) -> SurrogateScalar {
        let score_terms = self
            .log_prob_nodes
            .iter()
            .zip(coefficients)
            .filter_map(|(n, &c)| n.map(|id| (c, id)))
            .collect();
        SurrogateScalar { value: self.trajectory.ret, reward_nodes: self.reward_nodes.clone(), score_terms }
    }

    /// Value of the surrogate with the given frozen coefficients.
    pub fn surrogate_value(&self, coefficients: &[f64]) -> f64 {
        let s = self.surrogate(coefficients);
        s.value + s.score_terms.iter().map(|&(c, id)| c * self.tape.scalar(id)).sum::<f64>()
    }

    pub fn gradient(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        backward(&self.tape, &self.surrogate(coefficients))
    }
}

/// Reverse sweep of a surrogate scalar.
pub fn backward(tape: &Tape, s: &SurrogateScalar) -> Result<Vec<f64>> {
    let mut seeds: Vec<(NodeId, CMat)> = s.reward_nodes.iter().map(|&r| (r, CMat::real_scalar(1.0))).collect();
    for &(c, id) in &s.score_terms {
        if c != 0.0 {
            seeds.push((id, CMat::real_scalar(c)));
        }
    }
    tape.backward_seeded(&seeds)
}

#[derive(Clone, Debug)]
struct Branch {
    rho: NodeId,
    controls: Vec<NodeId>,
    carry: Carry,
    history: Vec<usize>,
    last: f64,
    decision: usize,
}

struct Machine<'a> {
    program: &'a Program,
    controller: &'a Controller,
    theta: &'a [f64],
    tape: Tape,
    bound: Bound,
    coupling: f64,
    n_decisions: usize,
    families: HashMap<usize, Arc<ContinuousFamily>>,
    lattices: HashMap<usize, Arc<Vec<f64>>>,
}

/// Candidate outcomes of a discrete measurement at the current state.
struct Discrete {
    labels: Vec<i32>,
    ops: Vec<CMat>,
    derivs: Vec<Vec<CMat>>,
    inputs: Vec<NodeId>,
    probs: Vec<f64>,
}

impl<'a> Machine<'a> {
    fn new(program: &'a Program, controller: &'a Controller, theta: &'a [f64], coupling: f64) -> Result<Self> {
        if controller.ctl_dim() != program.ctl_dim {
            return Err(Error::Controller(format!(
                "controller emits {} controls, program reads {}",
                controller.ctl_dim(),
                program.ctl_dim
            )));
        }
        let mut tape = Tape::new(theta.len());
        let bound = controller.bind(&mut tape, theta)?;
        Ok(Self {
            program,
            controller,
            theta,
            tape,
            bound,
            coupling,
            n_decisions: program.n_decisions(),
            families: HashMap::new(),
            lattices: HashMap::new(),
        })
    }

    fn start(&mut self) -> Branch {
        let rho = self.tape.constant(self.program.initial.clone());
        Branch { rho, controls: Vec::new(), carry: Carry::default(), history: Vec::new(), last: 0.0, decision: 0 }
    }

    fn ctl(&mut self, br: &Branch, c: Ctl) -> NodeId {
        match c {
            Ctl::Control(k) => br.controls[k],
            Ctl::Fixed(x) => self.tape.real_const(x),
        }
    }

    fn ctl_value(&self, id: NodeId) -> f64 {
        self.tape.scalar(id)
    }

    fn decide(&mut self, br: &mut Branch, uniform: Option<&mut dyn FnMut() -> f64>) -> Result<Vec<f64>> {
        let input = DecisionInput {
            index: br.decision,
            n_decisions: self.n_decisions,
            history: &br.history,
            last_outcome: br.last,
            rho: Some(br.rho),
        };
        let ids = self.controller.decide(&mut self.bound, &mut self.tape, self.theta, &mut br.carry, &input, uniform)?;
        br.decision += 1;
        let vals = ids.iter().map(|&i| self.tape.scalar(i)).collect();
        br.controls = ids;
        Ok(vals)
    }

    fn unitary(&mut self, br: &mut Branch, u: NodeId) {
        br.rho = self.tape.sandwich(u, br.rho);
    }

    /// Apply a gate, dissipation step or reward tap. Returns the reward node.
    fn apply(&mut self, br: &mut Branch, op: &Op) -> Result<Option<NodeId>> {
        let layout = self.program.layout;
        match op {
            Op::QubitDrive { slot, re, im } | Op::JcInteraction { slot, re, im } => {
                let a = self.ctl(br, *re);
                let b = self.ctl(br, *im);
                let (x, y) = (self.ctl_value(a), self.ctl_value(b));
                let g = if matches!(op, Op::QubitDrive { .. }) {
                    jc_qubit_drive(layout, *slot, x, y)
                } else {
                    jc_interaction(layout, *slot, x, y)
                };
                let u = self.tape.param_matrix(&[a, b], g.u, g.derivs);
                self.unitary(br, u);
                Ok(None)
            }
            Op::SnapBlock { re, im, phases } => {
                let cache = self
                    .program
                    .displacement
                    .clone()
                    .ok_or_else(|| Error::Contract("program lacks a displacement cache".into()))?;
                let a = self.ctl(br, *re);
                let b = self.ctl(br, *im);
                let d = displacement(&cache, self.ctl_value(a), self.ctl_value(b));
                let dn = self.tape.param_matrix(&[a, b], d.u, d.derivs);
                let ph: Vec<NodeId> = phases.iter().map(|&c| self.ctl(br, c)).collect();
                let vals: Vec<f64> = ph.iter().map(|&i| self.ctl_value(i)).collect();
                let s = snap(layout, &vals)?;
                let sn = self.tape.param_matrix(&ph, s.u, s.derivs);
                let ds = self.tape.matmul(dn, sn);
                let dd = self.tape.adjoint(dn);
                let u = self.tape.matmul(ds, dd);
                self.unitary(br, u);
                Ok(None)
            }
            Op::SpinRotation { tau } => {
                let t = self.ctl(br, *tau);
                let g = spin_rotation(self.coupling, self.ctl_value(t));
                let u = self.tape.param_matrix(&[t], g.u, g.derivs);
                self.unitary(br, u);
                Ok(None)
            }
            Op::Dissipate(spec) => {
                let lb = self
                    .program
                    .lindblad
                    .clone()
                    .ok_or_else(|| Error::Contract("program lacks a Lindblad generator".into()))?;
                br.rho = self.tape.dissipate(br.rho, lb, *spec);
                Ok(None)
            }
            Op::Reward { obs, weight } => {
                let r = reward_node(&mut self.tape, br.rho, obs);
                Ok(Some(self.tape.scale_real(r, *weight)))
            }
            Op::Decide | Op::DispersiveMeasure { .. } | Op::MeasureZ { .. } | Op::ContinuousReadout { .. } => {
                Err(Error::Contract("apply called on a decision or measurement".into()))
            }
        }
    }

    fn discrete(&mut self, br: &Branch, op: &Op) -> Result<Discrete> {
        let layout = self.program.layout;
        let (labels, ops, derivs, inputs) = match op {
            Op::DispersiveMeasure { gamma, delta } => {
                let g = self.ctl(br, *gamma);
                let d = self.ctl(br, *delta);
                let povm = dispersive_povm(layout, self.ctl_value(g), self.ctl_value(d));
                (vec![1, -1], vec![povm.plus.u, povm.minus.u], vec![povm.plus.derivs, povm.minus.derivs], vec![g, d])
            }
            Op::MeasureZ { slot } => {
                let pg = CMat::real_diag(&[1.0, 0.0]);
                let pe = CMat::real_diag(&[0.0, 1.0]);
                let ops = vec![layout.embed_qubit(*slot, &pg), layout.embed_qubit(*slot, &pe)];
                (vec![1, -1], ops, vec![vec![], vec![]], vec![])
            }
            _ => return Err(Error::Contract("not a discrete measurement".into())),
        };
        let rho = self.tape.value(br.rho);
        let probs = ops.iter().map(|m| m.sandwich(rho).trace().re.max(0.0)).collect();
        Ok(Discrete { labels, ops, derivs, inputs, probs })
    }

    /// Condition on outcome `k`; returns `(P node, ln P node)`.
    fn take(&mut self, br: &mut Branch, d: &Discrete, k: usize) -> (NodeId, NodeId) {
        let m = if d.inputs.is_empty() {
            self.tape.constant(d.ops[k].clone())
        } else {
            self.tape.param_matrix(&d.inputs, d.ops[k].clone(), d.derivs[k].clone())
        };
        let un = self.tape.sandwich(m, br.rho);
        let p = self.tape.trace_re(un);
        let inv = self.tape.map(p, RealFn::Recip);
        br.rho = self.tape.scale_by(inv, un);
        let lp = self.tape.map(p, RealFn::Ln);
        br.history.push(k);
        br.last = d.labels[k] as f64;
        (p, lp)
    }

    fn continuous(&mut self, br: &mut Branch, idx: usize, slot: usize, noise_std: f64, z: f64) -> Result<(f64, f64)> {
        if !self.families.contains_key(&idx) {
            let fam = match MeasurementFamily::qubit_readout(self.program.layout, slot, noise_std)? {
                MeasurementFamily::Continuous(f) => f,
                MeasurementFamily::Discrete(_) => unreachable!("qubit readout is continuous"),
            };
            self.lattices.insert(idx, Arc::new(fam.lattice.clone()));
            self.families.insert(idx, Arc::new(fam));
        }
        let fam = self.families[&idx].clone();
        let lattice = self.lattices[&idx].clone();
        let ld = LatticeDensity { family: fam.clone() };
        let pv = ld.forward(self.tape.value(br.rho));
        let p = self.tape.custom(&[br.rho], pv, Box::new(ld));
        let inv = InverseCdf { lattice, z };
        let (m, _, clamped) = inv.forward(self.tape.value(p));
        if clamped {
            log::warn!("continuous draw {z} outside [0, 1]; clamped");
        }
        let mnode = self.tape.custom(&[p], CMat::real_scalar(m), Box::new(inv));
        let k = self.tape.param_matrix(&[mnode], fam.kraus(m), vec![fam.kraus_derivative(m)]);
        let un = self.tape.sandwich(k, br.rho);
        let pm = self.tape.trace_re(un);
        let dens = self.tape.scalar(pm);
        if !(dens > 0.0) {
            return Err(Error::Contract("zero density at continuous outcome".into()));
        }
        let inv = self.tape.map(pm, RealFn::Recip);
        br.rho = self.tape.scale_by(inv, un);
        br.last = m;
        Ok((m, dens))
    }
}

fn reward_node(tape: &mut Tape, rho: NodeId, obs: &RewardObs) -> NodeId {
    match obs {
        RewardObs::Overlap(k) => {
            let ket = tape.constant((**k).clone());
            let bra = tape.constant(k.adjoint());
            let x = tape.matmul(bra, rho);
            let y = tape.matmul(x, ket);
            tape.real_part(y)
        }
        RewardObs::Purity => {
            let sq = tape.matmul(rho, rho);
            tape.trace_re(sq)
        }
        RewardObs::Expectation(h) => {
            let hn = tape.constant((**h).clone());
            let x = tape.matmul(hn, rho);
            tape.trace_re(x)
        }
    }
}

/// Options for a single recorded trajectory.
#[derive(Clone, Copy, Debug, Default)]
pub struct RecordOptions {
    /// Enables controller dropout.
    pub training: bool,
}

/// Record one trajectory: sampled outcomes, or replayed ones.
pub fn forward_record(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    source: OutcomeSource<'_>,
    options: RecordOptions,
) -> Result<Recorded> {
    let mut rng = ChaCha8Rng::seed_from_u64(match source {
        OutcomeSource::Sample(s) => s,
        OutcomeSource::Forced { .. } => 0,
    });
    let coupling = match source {
        OutcomeSource::Forced { coupling, .. } => coupling,
        OutcomeSource::Sample(_) => {
            let c = &program.coupling;
            if c.resample && c.std > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                c.mean + c.std * n
            } else {
                c.mean
            }
        }
    };
    let forced = match source {
        OutcomeSource::Forced { draws, .. } => Some(draws),
        OutcomeSource::Sample(_) => None,
    };
    let mut mc = Machine::new(program, controller, theta, coupling)?;
    let mut br = mc.start();
    let mut traj = Trajectory {
        outcomes: Vec::new(),
        history: Vec::new(),
        draws: Vec::new(),
        controls: Vec::new(),
        rewards: Vec::new(),
        segment_rewards: vec![0.0],
        ret: 0.0,
        log_prob: 0.0,
        final_state: CMat::zeros(0, 0),
        coupling,
        warnings: Vec::new(),
    };
    let mut reward_nodes = Vec::new();
    let mut log_prob_nodes = Vec::new();
    let mut next_draw = 0usize;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.random());
    for (idx, op) in program.ops.iter().enumerate() {
        match op {
            Op::Decide => {
                let vals = if options.training && forced.is_none() {
                    let mut u = || dropout_rng.random::<f64>();
                    mc.decide(&mut br, Some(&mut u))?
                } else {
                    mc.decide(&mut br, None)?
                };
                traj.controls.push(vals);
            }
            Op::DispersiveMeasure { .. } | Op::MeasureZ { .. } => {
                let d = mc.discrete(&br, op)?;
                let k = match forced {
                    Some(dr) => match dr.get(next_draw) {
                        Some(Draw::Index(k)) if *k < d.probs.len() => *k,
                        other => {
                            return Err(Error::Contract(format!(
                                "forced draw {next_draw} is {other:?}, expected a discrete index"
                            )))
                        }
                    },
                    None => {
                        let (k, warning) = sample_index(&d.probs, rng.random())?;
                        if let Some(w) = warning {
                            log::warn!("{w}");
                            traj.warnings.push(w);
                        }
                        k
                    }
                };
                next_draw += 1;
                let (p, lp) = mc.take(&mut br, &d, k);
                if !(mc.tape.scalar(p) > 0.0) {
                    return Err(Error::Contract(format!("outcome {k} has zero probability")));
                }
                traj.outcomes.push(Outcome::Discrete(d.labels[k]));
                traj.history.push(k);
                traj.draws.push(Draw::Index(k));
                traj.log_prob += mc.tape.scalar(lp);
                traj.segment_rewards.push(0.0);
                log_prob_nodes.push(Some(lp));
            }
            Op::ContinuousReadout { slot, noise_std } => {
                let z = match forced {
                    Some(dr) => match dr.get(next_draw) {
                        Some(Draw::Quantile(z)) => *z,
                        other => {
                            return Err(Error::Contract(format!(
                                "forced draw {next_draw} is {other:?}, expected a quantile"
                            )))
                        }
                    },
                    None => rng.random(),
                };
                next_draw += 1;
                let (m, dens) = mc.continuous(&mut br, idx, *slot, *noise_std, z)?;
                traj.outcomes.push(Outcome::Continuous(m));
                traj.draws.push(Draw::Quantile(z));
                traj.log_prob += dens.ln();
                traj.segment_rewards.push(0.0);
                log_prob_nodes.push(None);
            }
            _ => {
                if let Some(r) = mc.apply(&mut br, op)? {
                    let v = mc.tape.scalar(r);
                    traj.rewards.push(v);
                    *traj.segment_rewards.last_mut().expect("segment exists") += v;
                    reward_nodes.push(r);
                }
            }
        }
    }
    traj.ret = traj.rewards.iter().sum();
    if !traj.ret.is_finite() {
        return Err(Error::NonFiniteReturn(format!("trajectory outcomes {:?}", traj.outcomes)));
    }
    traj.final_state = mc.tape.value(br.rho).clone();
    Ok(Recorded { trajectory: traj, tape: mc.tape, reward_nodes, log_prob_nodes })
}

/// Exact average over outcome branches.
#[derive(Debug)]
pub struct Enumerated {
    pub tape: Tape,
    /// `Σ_m P(m) R(m)` on the tape.
    pub expected: NodeId,
    pub mean: f64,
    pub second_moment: f64,
    /// Outcome branches per coupling node.
    pub branches: usize,
}

impl Enumerated {
    pub fn std(&self) -> f64 {
        (self.second_moment - self.mean * self.mean).max(0.0).sqrt()
    }

    pub fn gradient(&self) -> Result<Vec<f64>> {
        self.tape.backward(self.expected)
    }
}

struct EnumStats {
    m1: f64,
    m2: f64,
    leaves: usize,
    cap: usize,
}

impl<'a> Machine<'a> {
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        &mut self,
        pc: usize,
        mut br: Branch,
        path: Option<NodeId>,
        path_p: f64,
        r_acc: f64,
        out: &mut Vec<NodeId>,
        stats: &mut EnumStats,
    ) -> Result<()> {
        let program = self.program;
        let ops = &program.ops;
        let mut r_acc = r_acc;
        for i in pc..ops.len() {
            let op = &ops[i];
            match op {
                Op::Decide => {
                    self.decide(&mut br, None)?;
                }
                Op::DispersiveMeasure { .. } | Op::MeasureZ { .. } => {
                    let d = self.discrete(&br, op)?;
                    for k in 0..d.probs.len() {
                        let pk = d.probs[k];
                        if pk < PROB_FLOOR || path_p * pk < PROB_FLOOR {
                            continue;
                        }
                        let mut child = br.clone();
                        let (p, _) = self.take(&mut child, &d, k);
                        let np = match path {
                            Some(q) => self.tape.scale_by(q, p),
                            None => p,
                        };
                        self.dfs(i + 1, child, Some(np), path_p * pk, r_acc, out, stats)?;
                    }
                    return Ok(());
                }
                Op::ContinuousReadout { .. } => {
                    return Err(Error::Unsupported("enumeration of continuous outcomes".into()));
                }
                _ => {
                    if let Some(r) = self.apply(&mut br, op)? {
                        r_acc += self.tape.scalar(r);
                        let c = match path {
                            Some(q) => self.tape.scale_by(q, r),
                            None => r,
                        };
                        out.push(c);
                    }
                }
            }
        }
        stats.leaves += 1;
        if stats.leaves > stats.cap {
            return Err(Error::BranchCap { branches: stats.leaves, cap: stats.cap });
        }
        stats.m1 += path_p * r_acc;
        stats.m2 += path_p * r_acc * r_acc;
        Ok(())
    }
}

/// Depth-first sum over all discrete outcome branches, averaged over the
/// coupling quadrature when the program carries an uncertain coupling.
pub fn enumerate_record(program: &Program, controller: &Controller, theta: &[f64], cap: usize) -> Result<Enumerated> {
    let c = &program.coupling;
    let nodes = normal_nodes(c.mean, c.std, c.quadrature_nodes);
    let mut mc = Machine::new(program, controller, theta, c.mean)?;
    let mut totals = Vec::with_capacity(nodes.len());
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut branches = 0;
    for &(g, w) in &nodes {
        mc.coupling = g;
        let br = mc.start();
        let mut out = Vec::new();
        let mut stats = EnumStats { m1: 0.0, m2: 0.0, leaves: 0, cap };
        mc.dfs(0, br, None, 1.0, 0.0, &mut out, &mut stats)?;
        branches = branches.max(stats.leaves);
        mean += w * stats.m1;
        second += w * stats.m2;
        let sum = if out.is_empty() { mc.tape.real_const(0.0) } else { mc.tape.sum(&out) };
        totals.push(if nodes.len() == 1 { sum } else { mc.tape.scale_real(sum, w) });
    }
    let expected = if totals.len() == 1 { totals[0] } else { mc.tape.sum(&totals) };
    Ok(Enumerated { tape: mc.tape, expected, mean, second_moment: second, branches })
}

/// Finite-difference check of the surrogate gradient with frozen outcomes.
#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub h: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

/// `‖a − b‖∞ / max(‖b‖∞, 1e-12)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    num / den.max(1e-12)
}

/// Sample one trajectory with `seed`, freeze its random inputs and score
/// coefficients, then compare the tape gradient with central differences.
pub fn finite_diff_check(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    h: f64,
    seed: u64,
    mode: CoefficientMode,
) -> Result<FdReport> {
    let base = forward_record(program, controller, theta, OutcomeSource::Sample(seed), RecordOptions::default())?;
    let coeffs = base.trajectory.coefficients(mode);
    let analytic = base.gradient(&coeffs)?;
    let draws = base.trajectory.draws.clone();
    let coupling = base.trajectory.coupling;
    let value = |th: &[f64]| -> Result<f64> {
        let r = forward_record(
            program,
            controller,
            th,
            OutcomeSource::Forced { draws: &draws, coupling },
            RecordOptions::default(),
        )?;
        Ok(r.surrogate_value(&coeffs))
    };
    let mut numeric = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let mut a = theta.to_vec();
        a[k] += h;
        let mut b = theta.to_vec();
        b[k] -= h;
        numeric.push((value(&a)? - value(&b)?) / (2.0 * h));
    }
    let max_rel_error = rel_error(&analytic, &numeric);
    Ok(FdReport { h, analytic, numeric, max_rel_error })
}
