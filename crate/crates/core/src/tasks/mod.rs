// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Scenario catalog: each task binds a layout, initial state, step plan and
//! reward into a [`Program`], plus defaults for training.

pub mod oracles;

pub use oracles::{
    analytic_purification_strategy, bare_decay_fock_fidelity, displacement_elements, gkp_stabilizer_mean,
    gkp_stabilizer_observable, law_eberly_replay, law_eberly_solve, purification_controls,
    spin_fidelity_averaged, spin_fidelity_closed_form, spin_fidelity_two_step,
};

use crate::channels::DissipationSpec;
use crate::controllers::{Controller, DenseNet, GruNet, LookupTable, RnnInput, TableMode};
use crate::error::{Error, Result};
use crate::graddiff::{enumerate_record, Coupling, Ctl, Op, Program, RewardObs, DEFAULT_BRANCH_CAP};
use crate::qcore::{build_state, c, CMat, HilbertLayout, StateKind, DEFAULT_LEAKAGE_TOL};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

/// Names accepted by [`build_task`].
pub const CATALOG: [&str; 7] = [
    "open_loop_jc_prep",
    "purification",
    "feedback_prep_thermal",
    "stabilize_jc",
    "stabilize_snap",
    "gkp_prep",
    "spin_uncertain",
];

/// Task overrides keyed by setting name.
pub type Overrides = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    FinalFidelity,
    FinalPurity,
    SumFidelity,
    MeanFidelity,
    /// Mean of the two finite-energy grid stabilizers at the end.
    FinalStabilizer,
}

impl RewardMode {
    fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Invalid(format!("unknown reward mode '{s}'")))
    }
}

/// Controller family used to drive a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// One table entry per measurement history.
    Table,
    /// One table entry per decision.
    Memoryless,
    /// Table entries on the all-(+1) branch only.
    Constrained,
    Dense,
    Gru,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Invalid(format!("unknown controller kind '{s}'")))
    }
}

/// Network sizes for the neural controllers.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerOptions {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Uniform range of table entries at initialization.
    pub table_init: (f64, f64),
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self { hidden: vec![30], dropout: 0.0, table_init: (0.0, PI) }
    }
}

/// A fully bound scenario.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    pub program: Program,
    pub horizon: usize,
    pub reward_mode: RewardMode,
    /// Cavity target ket, when the reward is a fidelity.
    pub target: Option<CMat>,
    /// Every setting after defaults and overrides.
    pub settings: BTreeMap<String, Value>,
    pub default_controller: ControllerKind,
    pub batch_size: usize,
    /// Train on the exact branch average instead of samples.
    pub enumeration: bool,
}

impl TaskSpec {
    pub fn layout(&self) -> HilbertLayout {
        self.program.layout
    }

    pub fn setting_f64(&self, key: &str) -> Option<f64> {
        self.settings.get(key).and_then(Value::as_f64)
    }

    /// Controller of `kind` sized for this task.
    pub fn controller(&self, kind: ControllerKind, opts: &ControllerOptions) -> Controller {
        let p = &self.program;
        let table = |mode| {
            let mut t = LookupTable::new(p.decision_depths(), 2, p.ctl_dim, mode);
            t.init_lo = opts.table_init.0;
            t.init_hi = opts.table_init.1;
            Controller::Table(t)
        };
        match kind {
            ControllerKind::Table => table(TableMode::Full),
            ControllerKind::Memoryless => table(TableMode::Memoryless),
            ControllerKind::Constrained => table(TableMode::PrincipalBranch),
            ControllerKind::Dense => {
                let mut d = DenseNet::for_state(p.layout.dim(), p.ctl_dim);
                let n = d.widths.len();
                d.widths.splice(1..n - 1, opts.hidden.iter().copied());
                Controller::Dense(d)
            }
            ControllerKind::Gru => {
                let input = if p.n_measurements() > 0 { RnnInput::Outcome } else { RnnInput::Time };
                let mut g = GruNet::new(opts.hidden.clone(), p.ctl_dim, input);
                g.dropout = opts.dropout;
                Controller::Gru(g)
            }
        }
    }

    /// Exact mean return and gradient by branch enumeration.
    pub fn exact_enumeration_return(&self, controller: &Controller, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        exact_enumeration_return(self, controller, theta)
    }
}

/// `Σ_m P(m) R(m)` and its gradient, by depth-first enumeration.
pub fn exact_enumeration_return(task: &TaskSpec, controller: &Controller, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let e = enumerate_record(&task.program, controller, theta, DEFAULT_BRANCH_CAP)?;
    let g = e.gradient()?;
    Ok((e.mean, g))
}

/// Small instances of each catalog task (cutoff ≤ 8, at most three steps)
/// for gradient checks.
pub fn tiny_overrides(name: &str) -> Result<Overrides> {
    let v = |pairs: &[(&str, Value)]| pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<Overrides>();
    let s = |x: &str| Value::String(x.to_string());
    Ok(match name {
        "open_loop_jc_prep" => v(&[
            ("target", s("sup:1,3")),
            ("steps", num(3.0)),
            ("cutoff", num(6.0)),
            ("complex_controls", Value::Bool(true)),
        ]),
        "purification" => v(&[("measurements", num(3.0)), ("cutoff", num(8.0)), ("n_bar", num(0.1))]),
        "feedback_prep_thermal" => v(&[
            ("target", s("sup:1,2")),
            ("n_bar", num(0.1)),
            ("steps", num(2.0)),
            ("cutoff", num(6.0)),
            ("kappa_t_m", num(0.02)),
            ("kappa_t_c", num(0.01)),
            ("complex_controls", Value::Bool(true)),
        ]),
        "stabilize_jc" => v(&[("steps", num(2.0)), ("cutoff", num(5.0)), ("kappa_t_c", num(0.02))]),
        "stabilize_snap" => v(&[
            ("target", s("kitten2:0.7")),
            ("steps", num(2.0)),
            ("cutoff", num(8.0)),
            ("n_snap", num(4.0)),
        ]),
        "gkp_prep" => v(&[("n_snap", num(3.0)), ("steps", num(2.0)), ("cutoff", num(8.0))]),
        "spin_uncertain" => v(&[("steps", num(3.0)), ("quadrature_nodes", num(5.0))]),
        _ => return Err(Error::UnknownTask(name.to_string())),
    })
}

/// Resolves settings from defaults and overrides, rejecting unknown keys.
struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    fn new(task: &str, defaults: &[(&str, Value)], overrides: &Overrides) -> Result<Self> {
        let mut values: BTreeMap<String, Value> = defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        for (k, v) in overrides {
            match values.get(k) {
                None => {
                    let known: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
                    return Err(Error::Invalid(format!(
                        "unknown setting '{k}' for task {task}; known: {}",
                        known.join(", ")
                    )));
                }
                Some(old) if !same_type(old, v) => {
                    return Err(Error::Invalid(format!("setting '{k}' expects {}, got {v}", type_name(old))));
                }
                Some(_) => {
                    values.insert(k.clone(), v.clone());
                }
            }
        }
        Ok(Self { values })
    }

    fn f(&self, k: &str) -> f64 {
        self.values[k].as_f64().expect("type checked")
    }

    fn u(&self, k: &str) -> Result<usize> {
        let v = self.f(k);
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Invalid(format!("setting '{k}' must be a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    }

    fn b(&self, k: &str) -> bool {
        self.values[k].as_bool().expect("type checked")
    }

    fn s(&self, k: &str) -> &str {
        self.values[k].as_str().expect("type checked")
    }
}

fn same_type(a: &Value, b: &Value) -> bool {
    matches!((a, b), (Value::Number(_), Value::Number(_)) | (Value::Bool(_), Value::Bool(_)) | (Value::String(_), Value::String(_)))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Number(_) => "a number",
        Value::Bool(_) => "a boolean",
        Value::String(_) => "a string",
        _ => "a value",
    }
}

fn num(x: f64) -> Value {
    serde_json::json!(x)
}

/// Parse a target: `fock:<n>`, `sup:<n>,<n>,…` (equal weights),
/// `kitten2:<α>` or `kitten4:<α>`.
pub fn parse_target(spec: &str) -> Result<StateKind> {
    let (kind, arg) = spec.split_once(':').ok_or_else(|| Error::Invalid(format!("target '{spec}' lacks ':'")))?;
    let bad = || Error::Invalid(format!("cannot parse target '{spec}'"));
    Ok(match kind {
        "fock" => StateKind::Fock { n: arg.trim().parse().map_err(|_| bad())? },
        "sup" => {
            let levels: Vec<usize> =
                arg.split(',').map(|s| s.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            if levels.is_empty() {
                return Err(bad());
            }
            StateKind::Superposition { amplitudes: levels.into_iter().map(|n| (n, 1.0)).collect() }
        }
        "kitten2" => StateKind::Kitten2 { re: arg.trim().parse().map_err(|_| bad())?, im: 0.0 },
        "kitten4" => StateKind::Kitten4 { re: arg.trim().parse().map_err(|_| bad())?, im: 0.0 },
        _ => return Err(bad()),
    })
}

fn target_ket(kind: &StateKind, layout: HilbertLayout) -> Result<CMat> {
    let cav = HilbertLayout::cavity(layout.fock_cutoff);
    let built = build_state(kind, cav, DEFAULT_LEAKAGE_TOL)?;
    let ket = built.state.as_ket().ok_or_else(|| Error::Invalid("target must be pure".into()))?;
    Ok(ket.amplitudes().clone())
}

/// `|ψ><ψ| ⊗ I` so the reward is the cavity fidelity.
fn fidelity_obs(layout: HilbertLayout, psi: &CMat) -> RewardObs {
    RewardObs::Expectation(Arc::new(layout.embed_cavity(&CMat::outer(psi, psi))))
}

fn initial_state(kind: &StateKind, layout: HilbertLayout) -> Result<CMat> {
    Ok(build_state(kind, layout, DEFAULT_LEAKAGE_TOL)?.state.density().into_matrix())
}

/// Reward taps after step `j` of `n` (0-based) and at the end.
fn step_reward(mode: RewardMode, obs: &RewardObs, j: usize, n: usize, ops: &mut Vec<Op>) {
    match mode {
        RewardMode::SumFidelity => ops.push(Op::Reward { obs: obs.clone(), weight: 1.0 }),
        RewardMode::MeanFidelity => ops.push(Op::Reward { obs: obs.clone(), weight: 1.0 / n as f64 }),
        _ if j + 1 == n => ops.push(Op::Reward { obs: obs.clone(), weight: 1.0 }),
        _ => {}
    }
}

fn dissipate(ops: &mut Vec<Op>, kappa_t: f64) {
    if kappa_t > 0.0 {
        ops.push(Op::Dissipate(DissipationSpec::new(kappa_t)));
    }
}

fn fidelity_mode(s: &Settings) -> Result<RewardMode> {
    let m = RewardMode::parse(s.s("reward"))?;
    if !matches!(m, RewardMode::FinalFidelity | RewardMode::SumFidelity | RewardMode::MeanFidelity) {
        return Err(Error::Invalid(format!("reward '{}' does not apply to this task", s.s("reward"))));
    }
    Ok(m)
}

/// JC gate pair `U_qc(β) U_q(α)` reading controls from `base`.
fn jc_pair(ops: &mut Vec<Op>, base: usize, complex: Option<usize>) {
    let im = |k: usize| complex.map_or(Ctl::Fixed(0.0), |c| Ctl::Control(c + k));
    ops.push(Op::QubitDrive { slot: 0, re: Ctl::Control(base), im: im(0) });
    ops.push(Op::JcInteraction { slot: 0, re: Ctl::Control(base + 1), im: im(1) });
}

/// Valid setting names for a catalog task.
pub fn task_settings(name: &str) -> Result<Vec<String>> {
    Ok(defaults(name)?.into_iter().map(|(k, _)| k.to_string()).collect())
}

fn defaults(name: &str) -> Result<Vec<(&'static str, Value)>> {
    let s = |x: &str| Value::String(x.to_string());
    Ok(match name {
        "open_loop_jc_prep" => vec![
            ("target", s("fock:2")),
            ("steps", num(0.0)),
            ("cutoff", num(0.0)),
            ("complex_controls", Value::Bool(false)),
            ("reward", s("final_fidelity")),
        ],
        "purification" => vec![("n_bar", num(2.0)), ("measurements", num(4.0)), ("cutoff", num(40.0))],
        "feedback_prep_thermal" => vec![
            ("target", s("sup:1,2,3")),
            ("n_bar", num(1.0)),
            ("steps", num(5.0)),
            ("cutoff", num(24.0)),
            ("kappa_t_m", num(0.0)),
            ("kappa_t_c", num(0.0)),
            ("complex_controls", Value::Bool(false)),
            ("reward", s("final_fidelity")),
        ],
        "stabilize_jc" => vec![
            ("target", s("fock:1")),
            ("steps", num(4.0)),
            ("cutoff", num(6.0)),
            ("kappa_t_m", num(0.05)),
            ("kappa_t_c", num(0.0)),
            ("substeps", num(1.0)),
            ("complex_controls", Value::Bool(false)),
            ("reward", s("final_fidelity")),
        ],
        "stabilize_snap" => vec![
            ("target", s("kitten2:1.4142135623730951")),
            ("steps", num(10.0)),
            ("cutoff", num(30.0)),
            ("kappa_t_m", num(0.01)),
            ("kappa_t_c", num(0.0)),
            ("n_snap", num(15.0)),
            ("reward", s("mean_fidelity")),
        ],
        "gkp_prep" => vec![
            ("delta", num(0.5)),
            ("n_snap", num(10.0)),
            ("steps", num(4.0)),
            ("cutoff", num(40.0)),
            ("edge_level", num(20.0)),
            ("edge_penalty", num(100.0)),
        ],
        "spin_uncertain" => vec![
            ("steps", num(2.0)),
            ("g_mean", num(1.0)),
            ("sigma_rel", num(0.2)),
            ("quadrature_nodes", num(41.0)),
            ("resample", Value::Bool(true)),
        ],
        _ => return Err(Error::UnknownTask(name.to_string())),
    })
}

/// Build a catalog task with `overrides` applied to its defaults.
pub fn build_task(name: &str, overrides: &Overrides) -> Result<TaskSpec> {
    let s = Settings::new(name, &defaults(name)?, overrides)?;
    let mut ops = Vec::new();
    let mut target = None;
    let (layout, initial, ctl_dim, horizon, mode, kind, batch, enumeration, coupling) = match name {
        "open_loop_jc_prep" => {
            let tk = parse_target(s.s("target"))?;
            let top = top_level(&tk);
            let steps = match s.u("steps")? {
                0 => top.max(1),
                n => n,
            };
            let cutoff = match s.u("cutoff")? {
                0 => default_cutoff(&tk, steps),
                n => n,
            };
            let layout = HilbertLayout::new(cutoff, 1)?;
            let psi = target_ket(&tk, layout)?;
            let obs = fidelity_obs(layout, &psi);
            target = Some(psi);
            let complex = s.b("complex_controls");
            let mode = fidelity_mode(&s)?;
            for j in 0..steps {
                ops.push(Op::Decide);
                jc_pair(&mut ops, 0, complex.then_some(2));
                step_reward(mode, &obs, j, steps, &mut ops);
            }
            let init = initial_state(&StateKind::Ground, layout)?;
            (layout, init, if complex { 4 } else { 2 }, steps, mode, ControllerKind::Table, 1, true, None)
        }
        "purification" => {
            let cutoff = s.u("cutoff")?;
            let j = s.u("measurements")?;
            if j == 0 {
                return Err(Error::Invalid("purification needs at least one measurement".into()));
            }
            let layout = HilbertLayout::cavity(cutoff);
            for _ in 0..j {
                ops.push(Op::Decide);
                ops.push(Op::DispersiveMeasure { gamma: Ctl::Control(0), delta: Ctl::Control(1) });
            }
            ops.push(Op::Reward { obs: RewardObs::Purity, weight: 1.0 });
            let init = initial_state(&StateKind::Thermal { n_bar: s.f("n_bar") }, layout)?;
            (layout, init, 2, j, RewardMode::FinalPurity, ControllerKind::Table, 32, false, None)
        }
        "feedback_prep_thermal" | "stabilize_jc" => {
            let tk = parse_target(s.s("target"))?;
            let steps = s.u("steps")?;
            if steps == 0 {
                return Err(Error::Invalid("at least one step is required".into()));
            }
            let layout = HilbertLayout::new(s.u("cutoff")?, 1)?;
            let psi = target_ket(&tk, layout)?;
            let obs = fidelity_obs(layout, &psi);
            target = Some(psi);
            let complex = s.b("complex_controls");
            let substeps = if name == "stabilize_jc" { s.u("substeps")?.max(1) } else { 1 };
            let n_real = 2 * substeps + 2;
            let ctl_dim = if complex { n_real + 2 * substeps } else { n_real };
            let mode = fidelity_mode(&s)?;
            // controls: [α, β per substep…, γ, δ, Im α, Im β per substep…]
            ops.push(Op::Decide);
            for j in 0..steps {
                dissipate(&mut ops, s.f("kappa_t_m"));
                ops.push(Op::DispersiveMeasure {
                    gamma: Ctl::Control(2 * substeps),
                    delta: Ctl::Control(2 * substeps + 1),
                });
                dissipate(&mut ops, s.f("kappa_t_c"));
                ops.push(Op::Decide);
                for k in 0..substeps {
                    jc_pair(&mut ops, 2 * k, complex.then_some(n_real + 2 * k));
                }
                step_reward(mode, &obs, j, steps, &mut ops);
            }
            let (init, batch) = if name == "stabilize_jc" {
                let t = target.as_ref().expect("set above");
                let g = CMat::real_diag(&(0..layout.qubit_dim()).map(|b| if b == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
                (CMat::outer(t, t).kron(&g), 32)
            } else {
                (initial_state(&StateKind::Thermal { n_bar: s.f("n_bar") }, layout)?, 10)
            };
            (layout, init, ctl_dim, steps, mode, ControllerKind::Table, batch, false, None)
        }
        "stabilize_snap" => {
            let tk = parse_target(s.s("target"))?;
            let steps = s.u("steps")?;
            let n_snap = s.u("n_snap")?;
            let layout = HilbertLayout::cavity(s.u("cutoff")?);
            if n_snap > layout.fock_cutoff {
                return Err(Error::Invalid(format!("n_snap {n_snap} exceeds cutoff {}", layout.fock_cutoff)));
            }
            let psi = target_ket(&tk, layout)?;
            let obs = fidelity_obs(layout, &psi);
            let mode = fidelity_mode(&s)?;
            for j in 0..steps {
                dissipate(&mut ops, s.f("kappa_t_m"));
                ops.push(Op::DispersiveMeasure { gamma: Ctl::Fixed(PI / 2.0), delta: Ctl::Fixed(0.0) });
                dissipate(&mut ops, s.f("kappa_t_c"));
                ops.push(Op::Decide);
                ops.push(snap_block(n_snap));
                step_reward(mode, &obs, j, steps, &mut ops);
            }
            let init = CMat::outer(&psi, &psi);
            target = Some(psi);
            (layout, init, 2 + n_snap, steps, mode, ControllerKind::Gru, 16, false, None)
        }
        "gkp_prep" => {
            let steps = s.u("steps")?;
            let n_snap = s.u("n_snap")?;
            let layout = HilbertLayout::cavity(s.u("cutoff")?);
            if n_snap > layout.fock_cutoff {
                return Err(Error::Invalid(format!("n_snap {n_snap} exceeds cutoff {}", layout.fock_cutoff)));
            }
            let edge = s.u("edge_level")?;
            let penalty = s.f("edge_penalty");
            let mut h = gkp_stabilizer_observable(layout, s.f("delta"))?;
            // occupation of levels at or above edge_level is charged edge_penalty
            for n in edge..layout.fock_cutoff {
                for q in 0..layout.qubit_dim() {
                    let i = layout.index(n, q);
                    h[(i, i)] -= c(penalty, 0.0);
                }
            }
            for _ in 0..steps {
                ops.push(Op::Decide);
                ops.push(snap_block(n_snap));
            }
            ops.push(Op::Reward { obs: RewardObs::Expectation(Arc::new(h)), weight: 1.0 });
            let init = initial_state(&StateKind::Ground, layout)?;
            (layout, init, 2 + n_snap, steps, RewardMode::FinalStabilizer, ControllerKind::Table, 1, true, None)
        }
        "spin_uncertain" => {
            let steps = s.u("steps")?;
            let layout = HilbertLayout::qubit();
            let up = Arc::new(crate::qcore::Ket::basis(2, 1).amplitudes().clone());
            for _ in 0..steps {
                ops.push(Op::Decide);
                ops.push(Op::SpinRotation { tau: Ctl::Control(0) });
                ops.push(Op::MeasureZ { slot: 0 });
            }
            ops.push(Op::Reward { obs: RewardObs::Overlap(up.clone()), weight: 1.0 });
            target = Some((*up).clone());
            let g = s.f("g_mean");
            let sigma = s.f("sigma_rel");
            if sigma < 0.0 {
                return Err(Error::Invalid("sigma_rel must be non-negative".into()));
            }
            let coupling = Coupling {
                mean: g,
                std: sigma * g.abs(),
                quadrature_nodes: s.u("quadrature_nodes")?.max(1),
                resample: s.b("resample"),
            };
            let init = initial_state(&StateKind::Ground, layout)?;
            (layout, init, 1, steps, RewardMode::FinalFidelity, ControllerKind::Table, 1000, true, Some(coupling))
        }
        _ => return Err(Error::UnknownTask(name.to_string())),
    };
    let _ = kind;
    let mut program = Program::new(layout, initial, ops, ctl_dim)?;
    if let Some(c) = coupling {
        program = program.with_coupling(c);
    }
    Ok(TaskSpec {
        name: name.to_string(),
        program,
        horizon,
        reward_mode: mode,
        target,
        settings: s.values,
        default_controller: kind,
        batch_size: batch,
        enumeration,
    })
}

fn snap_block(n_snap: usize) -> Op {
    Op::SnapBlock { re: Ctl::Control(0), im: Ctl::Control(1), phases: (0..n_snap).map(|k| Ctl::Control(2 + k)).collect() }
}

fn top_level(kind: &StateKind) -> usize {
    match kind {
        StateKind::Fock { n } => *n,
        StateKind::Superposition { amplitudes } => amplitudes.iter().map(|a| a.0).max().unwrap_or(0),
        StateKind::Kitten2 { re, im } | StateKind::Kitten4 { re, im } => {
            let nbar = re * re + im * im;
            (nbar + 3.0 * nbar.sqrt() + 2.0).ceil() as usize
        }
        _ => 0,
    }
}

fn default_cutoff(kind: &StateKind, steps: usize) -> usize {
    match kind {
        StateKind::Kitten2 { re, im } | StateKind::Kitten4 { re, im } => {
            let nbar = re * re + im * im;
            ((nbar + 8.0 * nbar.sqrt() + 8.0).ceil() as usize).max(steps + 2)
        }
        _ => steps.max(top_level(kind)) + 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graddiff::{adjoint_gradient, finite_diff_check, forward_record, rel_error, AdjointMode, CoefficientMode};
    use crate::graddiff::{OutcomeSource, RecordOptions};

    #[test]
    fn tiny_tasks_pass_gradient_checks() {
        for name in CATALOG {
            let t = build_task(name, &tiny_overrides(name).unwrap()).unwrap();
            assert!(t.layout().fock_cutoff <= 8 && t.horizon <= 3, "{name}");
            let ctl = t.controller(t.default_controller, &ControllerOptions { hidden: vec![4], ..Default::default() });
            let th = ctl.init(5).values;
            for seed in 0..3 {
                let fd = finite_diff_check(&t.program, &ctl, &th, 1e-5, seed, CoefficientMode::FutureReturn).unwrap();
                assert!(fd.max_rel_error < 1e-6, "{name}: {}", fd.max_rel_error);
                let r = forward_record(&t.program, &ctl, &th, OutcomeSource::Sample(seed), RecordOptions::default())
                    .unwrap();
                let co = r.trajectory.coefficients(CoefficientMode::FutureReturn);
                let tape = r.gradient(&co).unwrap();
                let adj = adjoint_gradient(
                    &t.program,
                    &ctl,
                    &th,
                    &r.trajectory.draws,
                    r.trajectory.coupling,
                    &co,
                    AdjointMode::Backward,
                )
                .unwrap();
                assert!(rel_error(&adj, &tape) < 1e-8, "{name}: {}", rel_error(&adj, &tape));
            }
        }
    }

    #[test]
    fn catalog_defaults() {
        let p = build_task("purification", &Overrides::new()).unwrap();
        assert_eq!(p.setting_f64("n_bar"), Some(2.0));
        assert_eq!(p.program.n_measurements(), 4);
        assert_eq!(p.batch_size, 32);
        let f = build_task("feedback_prep_thermal", &Overrides::new()).unwrap();
        assert_eq!(f.setting_f64("n_bar"), Some(1.0));
        let sp = build_task("spin_uncertain", &Overrides::new()).unwrap();
        assert!((sp.program.coupling.std - 0.2).abs() < 1e-15);
        assert!(matches!(build_task("nope", &Overrides::new()), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn overrides_are_checked() {
        let mut o = Overrides::new();
        o.insert("kappa_t_m".into(), serde_json::json!(0.07));
        let t = build_task("stabilize_jc", &o).unwrap();
        assert_eq!(t.setting_f64("kappa_t_m"), Some(0.07));
        o.insert("lr".into(), serde_json::json!(0.1));
        assert!(matches!(build_task("stabilize_jc", &o), Err(Error::Invalid(_))));
        let mut o = Overrides::new();
        o.insert("steps".into(), serde_json::json!("four"));
        assert!(build_task("stabilize_jc", &o).is_err());
    }

    #[test]
    fn stabilize_jc_zero_controls_is_bare_decay() {
        let t = build_task("stabilize_jc", &Overrides::new()).unwrap();
        let ctl = t.controller(ControllerKind::Table, &ControllerOptions::default());
        let theta = vec![0.0; ctl.n_params()];
        let (mean, _) = t.exact_enumeration_return(&ctl, &theta).unwrap();
        let bare = bare_decay_fock_fidelity(1, 4.0 * 0.05);
        // the integrator error is O((κdt)^5) per substep
        assert!((mean - bare).abs() < 1e-7, "{mean} vs {bare}");
    }

    #[test]
    fn spin_enumeration_matches_closed_form() {
        let mut o = Overrides::new();
        o.insert("steps".into(), serde_json::json!(3.0));
        let t = build_task("spin_uncertain", &o).unwrap();
        let ctl = t.controller(ControllerKind::Constrained, &ControllerOptions::default());
        let theta = vec![2.1, 0.4, 3.3];
        let (mean, _) = t.exact_enumeration_return(&ctl, &theta).unwrap();
        let c = &t.program.coupling;
        let cf = spin_fidelity_averaged(&theta, c.mean, c.std, c.quadrature_nodes);
        assert!((mean - cf).abs() < 1e-10, "{mean} vs {cf}");
    }

    #[test]
    fn analytic_purification_runs_as_a_controller() {
        let t = build_task("purification", &Overrides::new()).unwrap();
        let (ctl, theta) = analytic_purification_strategy(4).unwrap();
        let e = enumerate_record(&t.program, &ctl, &theta, DEFAULT_BRANCH_CAP).unwrap();
        assert_eq!(e.branches, 16);
        assert!(e.mean > 0.5 && e.mean < 1.0);
    }
}
