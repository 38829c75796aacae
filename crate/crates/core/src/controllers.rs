// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Controllers mapping measurement histories (or the current state) to
//! control vectors, differentiable through the tape.
//!
//! Lookup-table nodes are indexed breadth-first per decision: the node for
//! decision `d` after outcome indices `(i₁, …, i_k)` sits at
//! `offset_d + Σ i_j · a^{k−j}`, outcome +1 being index 0 (left child).
//! With one decision per tree level this is the heap order where node `i`
//! has children `a·i + 1 + outcome`.

use crate::error::{Error, Result};
use crate::graddiff::tape::{NodeId, RealFn, Tape};
use crate::qcore::CMat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Named block of the flat parameter vector, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat trainable vector θ with its structure map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub structure: Vec<Block>,
}

impl ParameterVector {
    /// Checks that the blocks tile `values` exactly.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for b in &self.structure {
            if b.offset != next {
                return Err(Error::Contract(format!("block {} starts at {} not {next}", b.name, b.offset)));
            }
            next += b.len();
        }
        if next != self.values.len() {
            return Err(Error::Contract(format!("blocks cover {next} of {} values", self.values.len())));
        }
        Ok(())
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.structure.iter().find(|b| b.name == name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How lookup-table entries are shared across histories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMode {
    /// One entry per history.
    Full,
    /// One entry per decision, ignoring outcomes.
    Memoryless,
    /// One entry per decision on the all-(+1) branch; zero controls elsewhere.
    PrincipalBranch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    /// Measurements preceding each decision.
    pub depths: Vec<usize>,
    pub outcomes: usize,
    pub ctl_dim: usize,
    pub mode: TableMode,
    /// Entries are drawn from `Uniform(init_lo, init_hi)`.
    pub init_lo: f64,
    pub init_hi: f64,
}

impl LookupTable {
    pub fn new(depths: Vec<usize>, outcomes: usize, ctl_dim: usize, mode: TableMode) -> Self {
        Self { depths, outcomes, ctl_dim, mode, init_lo: 0.0, init_hi: PI }
    }

    /// Decision tree of depth `n`: one decision per level `0..=n`.
    pub fn tree(n: usize, outcomes: usize, ctl_dim: usize, mode: TableMode) -> Self {
        Self::new((0..=n).collect(), outcomes, ctl_dim, mode)
    }

    fn level_size(&self, d: usize) -> usize {
        match self.mode {
            TableMode::Full => self.outcomes.pow(self.depths[d] as u32),
            TableMode::Memoryless | TableMode::PrincipalBranch => 1,
        }
    }

    pub fn n_nodes(&self) -> usize {
        (0..self.depths.len()).map(|d| self.level_size(d)).sum()
    }

    /// Node read by decision `d` after `history`, or `None` when the
    /// controls are pinned to zero.
    pub fn node_index(&self, d: usize, history: &[usize]) -> Result<Option<usize>> {
        if d >= self.depths.len() {
            return Err(Error::Controller(format!("decision {d} beyond table depth {}", self.depths.len())));
        }
        if history.len() != self.depths[d] {
            return Err(Error::Controller(format!(
                "decision {d} expects {} outcomes, got {}",
                self.depths[d],
                history.len()
            )));
        }
        if let Some(&bad) = history.iter().find(|&&i| i >= self.outcomes) {
            return Err(Error::Controller(format!("outcome index {bad} out of range")));
        }
        let offset: usize = (0..d).map(|k| self.level_size(k)).sum();
        Ok(match self.mode {
            TableMode::Full => Some(offset + history.iter().fold(0, |acc, &i| acc * self.outcomes + i)),
            TableMode::Memoryless => Some(offset),
            TableMode::PrincipalBranch => history.iter().all(|&i| i == 0).then_some(offset),
        })
    }
}

/// Fully connected ReLU network on the flattened state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    /// `[in, hidden…, out]`.
    pub widths: Vec<usize>,
    pub last_bias: f64,
}

impl DenseNet {
    /// `[2·dim², 30, 30, out]` as in the reference setup.
    pub fn for_state(dim: usize, out: usize) -> Self {
        Self { widths: vec![2 * dim * dim, 30, 30, out], last_bias: PI }
    }
}

/// What a recurrent controller consumes at each decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RnnInput {
    /// Latest outcome label (0 before the first measurement).
    Outcome,
    /// `j/N` for decision `j` of `N`.
    Time,
}

/// Stack of GRU cells followed by a linear read-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruNet {
    pub hidden: Vec<usize>,
    pub out: usize,
    pub input: RnnInput,
    /// Inverted input dropout rate used in training.
    pub dropout: f64,
    pub last_bias: f64,
}

impl GruNet {
    pub fn new(hidden: Vec<usize>, out: usize, input: RnnInput) -> Self {
        Self { hidden, out, input, dropout: 0.0, last_bias: PI }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controller {
    Table(LookupTable),
    Dense(DenseNet),
    Gru(GruNet),
}

/// Per-decision input to a controller.
#[derive(Clone, Copy, Debug)]
pub struct DecisionInput<'a> {
    pub index: usize,
    pub n_decisions: usize,
    /// Outcome indices so far.
    pub history: &'a [usize],
    /// Latest outcome value (label or continuous reading), 0 at start.
    pub last_outcome: f64,
    /// Current normalized state on the tape.
    pub rho: Option<NodeId>,
}

/// Recurrent state carried along a trajectory branch.
#[derive(Clone, Debug, Default)]
pub struct Carry {
    pub hidden: Vec<NodeId>,
}

/// Parameter leaves created on a specific tape.
#[derive(Debug)]
pub enum Bound {
    Table(HashMap<usize, NodeId>),
    Dense(Vec<(NodeId, NodeId)>),
    Gru { cells: Vec<GruCell>, out: (NodeId, NodeId) },
}

#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    wz: NodeId,
    wr: NodeId,
    wh: NodeId,
    uz: NodeId,
    ur: NodeId,
    uh: NodeId,
    bz: NodeId,
    br: NodeId,
    bh: NodeId,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

struct Builder {
    values: Vec<f64>,
    structure: Vec<Block>,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, vals: Vec<f64>) {
        debug_assert_eq!(vals.len(), rows * cols);
        self.structure.push(Block { name, offset: self.values.len(), rows, cols });
        self.values.extend(vals);
    }
}

impl Controller {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Controller::Table(_) => "table",
            Controller::Dense(_) => "dense",
            Controller::Gru(_) => "gru",
        }
    }

    pub fn ctl_dim(&self) -> usize {
        match self {
            Controller::Table(t) => t.ctl_dim,
            Controller::Dense(d) => *d.widths.last().unwrap_or(&0),
            Controller::Gru(g) => g.out,
        }
    }

    /// Whether outputs depend on the quantum state.
    pub fn is_state_dependent(&self) -> bool {
        matches!(self, Controller::Dense(_))
    }

    /// Parameter layout and seeded initial values.
    pub fn init(&self, seed: u64) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { values: Vec::new(), structure: Vec::new() };
        match self {
            Controller::Table(t) => {
                let n = t.n_nodes();
                let vals = (0..n * t.ctl_dim)
                    .map(|_| if t.init_hi > t.init_lo { rng.random_range(t.init_lo..t.init_hi) } else { t.init_lo })
                    .collect();
                b.push("table".into(), n, t.ctl_dim, vals);
            }
            Controller::Dense(d) => {
                let layers = d.widths.len() - 1;
                for l in 0..layers {
                    let (i, o) = (d.widths[l], d.widths[l + 1]);
                    b.push(format!("dense{l}.w"), o, i, glorot(&mut rng, i, o, o * i));
                    let bias = if l + 1 == layers { d.last_bias } else { 0.0 };
                    b.push(format!("dense{l}.b"), o, 1, vec![bias; o]);
                }
            }
            Controller::Gru(g) => {
                let mut inp = 1;
                for (l, &h) in g.hidden.iter().enumerate() {
                    for gate in ["z", "r", "h"] {
                        b.push(format!("gru{l}.w{gate}"), h, inp, glorot(&mut rng, inp, h, h * inp));
                    }
                    for gate in ["z", "r", "h"] {
                        b.push(format!("gru{l}.u{gate}"), h, h, glorot(&mut rng, h, h, h * h));
                    }
                    for gate in ["z", "r", "h"] {
                        b.push(format!("gru{l}.b{gate}"), h, 1, vec![0.0; h]);
                    }
                    inp = h;
                }
                b.push("out.w".into(), g.out, inp, glorot(&mut rng, inp, g.out, g.out * inp));
                b.push("out.b".into(), g.out, 1, vec![g.last_bias; g.out]);
            }
        }
        ParameterVector { values: b.values, structure: b.structure }
    }

    pub fn n_params(&self) -> usize {
        self.init(0).len()
    }

    /// Create the parameter leaves this controller needs on `tape`.
    pub fn bind(&self, tape: &mut Tape, theta: &[f64]) -> Result<Bound> {
        let expected = self.n_params();
        if theta.len() != expected {
            return Err(Error::Controller(format!("θ has {} entries, controller needs {expected}", theta.len())));
        }
        let layout = self.init(0).structure;
        let leaf = |tape: &mut Tape, i: usize| {
            let b = &layout[i];
            tape.param(theta, b.offset, b.rows, b.cols)
        };
        Ok(match self {
            Controller::Table(_) => Bound::Table(HashMap::new()),
            Controller::Dense(d) => {
                let layers = d.widths.len() - 1;
                let mut v = Vec::with_capacity(layers);
                for l in 0..layers {
                    v.push((leaf(tape, 2 * l), leaf(tape, 2 * l + 1)));
                }
                Bound::Dense(v)
            }
            Controller::Gru(g) => {
                let mut cells = Vec::new();
                for l in 0..g.hidden.len() {
                    let k = 9 * l;
                    cells.push(GruCell {
                        wz: leaf(tape, k),
                        wr: leaf(tape, k + 1),
                        wh: leaf(tape, k + 2),
                        uz: leaf(tape, k + 3),
                        ur: leaf(tape, k + 4),
                        uh: leaf(tape, k + 5),
                        bz: leaf(tape, k + 6),
                        br: leaf(tape, k + 7),
                        bh: leaf(tape, k + 8),
                    });
                }
                let k = 9 * g.hidden.len();
                Bound::Gru { cells, out: (leaf(tape, k), leaf(tape, k + 1)) }
            }
        })
    }

    /// Emit one control vector as `1 x 1` tape nodes. `uniform` supplies
    /// dropout draws in training mode.
    pub fn decide(
        &self,
        bound: &mut Bound,
        tape: &mut Tape,
        theta: &[f64],
        carry: &mut Carry,
        input: &DecisionInput<'_>,
        uniform: Option<&mut dyn FnMut() -> f64>,
    ) -> Result<Vec<NodeId>> {
        match (self, bound) {
            (Controller::Table(t), Bound::Table(cache)) => {
                let out = match t.node_index(input.index, input.history)? {
                    Some(node) => {
                        let col = *cache.entry(node).or_insert_with(|| tape.param(theta, node * t.ctl_dim, t.ctl_dim, 1));
                        (0..t.ctl_dim).map(|i| tape.element(col, i, 0)).collect()
                    }
                    None => (0..t.ctl_dim).map(|_| tape.real_const(0.0)).collect(),
                };
                Ok(out)
            }
            (Controller::Dense(d), Bound::Dense(layers)) => {
                let rho = input
                    .rho
                    .ok_or_else(|| Error::Controller("dense controller needs the state as input".into()))?;
                let dim = tape.value(rho).rows();
                if 2 * dim * dim != d.widths[0] {
                    return Err(Error::Controller(format!("dense input width {} != 2·{dim}²", d.widths[0])));
                }
                let mut x = flatten_re_im(tape, rho);
                let n = layers.len();
                for (l, &(w, b)) in layers.iter().enumerate() {
                    let wx = tape.matmul(w, x);
                    let z = tape.add(wx, b);
                    x = if l + 1 < n { tape.map(z, RealFn::Relu) } else { z };
                }
                Ok((0..d.widths[n]).map(|i| tape.element(x, i, 0)).collect())
            }
            (Controller::Gru(g), Bound::Gru { cells, out }) => {
                let raw = match g.input {
                    RnnInput::Outcome => input.last_outcome,
                    RnnInput::Time => input.index as f64 / input.n_decisions.max(1) as f64,
                };
                let mut xv = raw;
                if let Some(u) = uniform {
                    if g.dropout > 0.0 {
                        xv = if u() < g.dropout { 0.0 } else { raw / (1.0 - g.dropout) };
                    }
                }
                let mut x = tape.real_const(xv);
                if carry.hidden.is_empty() {
                    carry.hidden = g.hidden.iter().map(|&h| tape.constant(CMat::zeros(h, 1))).collect();
                }
                for (l, cell) in cells.iter().enumerate() {
                    let h = carry.hidden[l];
                    let h_new = gru_step(tape, cell, x, h);
                    carry.hidden[l] = h_new;
                    x = h_new;
                }
                let wx = tape.matmul(out.0, x);
                let y = tape.add(wx, out.1);
                Ok((0..g.out).map(|i| tape.element(y, i, 0)).collect())
            }
            _ => Err(Error::Controller("bound parameters do not match controller kind".into())),
        }
    }

    /// Numeric controls for a sequence of decisions along one history,
    /// without a state input. Returns one vector per decision.
    pub fn controls_along(&self, theta: &[f64], histories: &[Vec<usize>], last: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(theta.len());
        let mut bound = self.bind(&mut tape, theta)?;
        let mut carry = Carry::default();
        let n = histories.len();
        let mut out = Vec::with_capacity(n);
        for (d, h) in histories.iter().enumerate() {
            let input = DecisionInput { index: d, n_decisions: n, history: h, last_outcome: last[d], rho: None };
            let ids = self.decide(&mut bound, &mut tape, theta, &mut carry, &input, None)?;
            out.push(ids.iter().map(|&i| tape.scalar(i)).collect());
        }
        Ok(out)
    }
}

/// `h' = z∘h + (1−z)∘h̃` with the reset gate applied before the candidate
/// transform.
fn gru_step(tape: &mut Tape, c: &GruCell, x: NodeId, h: NodeId) -> NodeId {
    let affine = |tape: &mut Tape, w: NodeId, u: NodeId, b: NodeId, hh: NodeId| {
        let a = tape.matmul(w, x);
        let bb = tape.matmul(u, hh);
        let s = tape.add(a, bb);
        tape.add(s, b)
    };
    let z = affine(tape, c.wz, c.uz, c.bz, h);
    let z = tape.map(z, RealFn::Sigmoid);
    let r = affine(tape, c.wr, c.ur, c.br, h);
    let r = tape.map(r, RealFn::Sigmoid);
    let rh = tape.hadamard(r, h);
    let cand = affine(tape, c.wh, c.uh, c.bh, rh);
    let cand = tape.map(cand, RealFn::Tanh);
    let diff = tape.sub(h, cand);
    let zd = tape.hadamard(z, diff);
    tape.add(cand, zd)
}

/// Real and imaginary parts of a matrix stacked into one real column.
pub fn flatten_re_im(tape: &mut Tape, x: NodeId) -> NodeId {
    let v = tape.value(x).clone();
    let n = v.data().len();
    let mut out = Vec::with_capacity(2 * n);
    out.extend(v.data().iter().map(|z| crate::qcore::c(z.re, 0.0)));
    out.extend(v.data().iter().map(|z| crate::qcore::c(z.im, 0.0)));
    tape.custom(&[x], CMat::column(out), Box::new(FlattenReIm))
}

#[derive(Debug)]
struct FlattenReIm;

impl crate::graddiff::tape::CustomOp for FlattenReIm {
    fn name(&self) -> &'static str {
        "flatten_re_im"
    }

    fn backward(&self, inputs: &[&CMat], _output: &CMat, g: &CMat) -> Vec<CMat> {
        let (r, c) = inputs[0].shape();
        let n = r * c;
        let data = (0..n).map(|k| crate::qcore::c(g.data()[k].re, g.data()[n + k].re)).collect();
        vec![CMat::from_vec(r, c, data)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::c;

    #[test]
    fn table_node_counts() {
        assert_eq!(LookupTable::tree(4, 2, 4, TableMode::Full).n_nodes(), 31);
        assert_eq!(LookupTable::tree(4, 2, 4, TableMode::Memoryless).n_nodes(), 5);
        assert_eq!(LookupTable::new(vec![0, 1, 2, 3], 2, 2, TableMode::Full).n_nodes(), 15);
    }

    #[test]
    fn table_indexing_is_heap_order() {
        let t = LookupTable::tree(3, 2, 1, TableMode::Full);
        assert_eq!(t.node_index(0, &[]).unwrap(), Some(0));
        assert_eq!(t.node_index(1, &[0]).unwrap(), Some(1));
        assert_eq!(t.node_index(1, &[1]).unwrap(), Some(2));
        // (+1, −1): child 2 of node 1
        assert_eq!(t.node_index(2, &[0, 1]).unwrap(), Some(2 * 1 + 2));
        assert_eq!(t.node_index(3, &[1, 1, 0]).unwrap(), Some(2 * (2 * 2 + 2) + 1));
        assert!(t.node_index(4, &[0, 0, 0, 0]).is_err());
        assert!(t.node_index(2, &[0]).is_err());
    }

    #[test]
    fn principal_branch_pins_off_branch() {
        let t = LookupTable::tree(2, 2, 1, TableMode::PrincipalBranch);
        assert_eq!(t.node_index(2, &[0, 0]).unwrap(), Some(2));
        assert_eq!(t.node_index(2, &[0, 1]).unwrap(), None);
    }

    #[test]
    fn init_is_seeded_and_partitioned() {
        for ctl in [
            Controller::Table(LookupTable::tree(4, 2, 4, TableMode::Full)),
            Controller::Dense(DenseNet::for_state(3, 4)),
            Controller::Gru(GruNet::new(vec![30, 30, 30], 4, RnnInput::Outcome)),
        ] {
            let a = ctl.init(7);
            let b = ctl.init(7);
            assert_eq!(a, b);
            a.validate().unwrap();
            assert_ne!(a.values, ctl.init(8).values);
        }
        let t = Controller::Table(LookupTable::tree(4, 2, 4, TableMode::Full)).init(1);
        assert!(t.values.iter().all(|&x| (0.0..PI).contains(&x)));
    }

    #[test]
    fn zero_weight_gru_outputs_bias() {
        let g = Controller::Gru(GruNet::new(vec![30], 3, RnnInput::Outcome));
        let mut p = g.init(3);
        let out = p.block("out.w").unwrap().clone();
        for v in &mut p.values[out.offset..out.offset + out.len()] {
            *v = 0.0;
        }
        let hs = vec![vec![], vec![0], vec![0, 1]];
        let ctl = g.controls_along(&p.values, &hs, &[0.0, 1.0, -1.0]).unwrap();
        for row in ctl {
            for x in row {
                assert!((x - PI).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dense_is_state_sensitive() {
        let ctl = Controller::Dense(DenseNet::for_state(3, 2));
        let p = ctl.init(11);
        let run = |rho: CMat| {
            let mut tape = Tape::new(p.len());
            let mut bound = ctl.bind(&mut tape, &p.values).unwrap();
            let r = tape.constant(rho);
            let input = DecisionInput { index: 0, n_decisions: 1, history: &[], last_outcome: 0.0, rho: Some(r) };
            let ids = ctl.decide(&mut bound, &mut tape, &p.values, &mut Carry::default(), &input, None).unwrap();
            ids.iter().map(|&i| tape.scalar(i)).collect::<Vec<_>>()
        };
        let a = run(CMat::real_diag(&[0.7, 0.3, 0.0]));
        let b = run(CMat::real_diag(&[0.3, 0.7, 0.0]));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    fn output_gradient_matches_fd(ctl: &Controller, seed: u64) {
        let p = ctl.init(seed);
        let mut rho = CMat::real_diag(&[0.5, 0.3, 0.2]);
        rho[(0, 1)] = c(0.1, 0.05);
        rho[(1, 0)] = c(0.1, -0.05);
        let hs = [vec![], vec![1], vec![1, 0]];
        let lasts = [0.0, -1.0, 1.0];
        let f = |theta: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new(theta.len());
            let mut bound = ctl.bind(&mut tape, theta).unwrap();
            let r = tape.constant(rho.clone());
            let mut carry = Carry::default();
            let mut acc = Vec::new();
            for d in 0..3 {
                let input =
                    DecisionInput { index: d, n_decisions: 3, history: &hs[d], last_outcome: lasts[d], rho: Some(r) };
                let ids = ctl.decide(&mut bound, &mut tape, theta, &mut carry, &input, None).unwrap();
                let w = tape.scale_real(ids[1], 0.7 + d as f64);
                acc.push(w);
                acc.push(ids[0]);
            }
            let s = tape.sum(&acc);
            let s = tape.map(s, RealFn::Sin);
            let g = tape.backward(s).unwrap();
            (tape.scalar(s), g)
        };
        let (_, g) = f(&p.values);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..p.len() {
            let mut a = p.values.clone();
            a[k] += h;
            let mut b = p.values.clone();
            b[k] -= h;
            let num = (f(&a).0 - f(&b).0) / (2.0 * h);
            worst = worst.max((num - g[k]).abs());
        }
        assert!(worst < 1e-6, "{} worst abs error {worst}", ctl.kind_name());
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        output_gradient_matches_fd(&Controller::Table(LookupTable::tree(2, 2, 2, TableMode::Full)), 1);
        output_gradient_matches_fd(&Controller::Dense(DenseNet { widths: vec![18, 6, 5, 2], last_bias: 0.1 }), 2);
        output_gradient_matches_fd(&Controller::Gru(GruNet::new(vec![4, 3], 2, RnnInput::Outcome)), 3);
        output_gradient_matches_fd(&Controller::Gru(GruNet::new(vec![5], 2, RnnInput::Time)), 4);
    }
}
