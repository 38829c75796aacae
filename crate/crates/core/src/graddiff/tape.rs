// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Reverse-mode tape over complex matrices.
//!
//! Gradients use the convention `G = ∂L/∂Re Y + i ∂L/∂Im Y` for a real
//! scalar `L`, so `dL = Re tr(G^H dY)`. Parameters are real, and their
//! gradient is the real part of the accumulated `G`.

use crate::channels::{DissipationSpec, Lindblad};
use crate::error::{Error, Result};
use crate::qcore::{c, CMat, C64};
use std::fmt;
use std::sync::Arc;

pub type NodeId = usize;

/// Elementwise real functions, applied to the real part of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealFn {
    Relu,
    Sigmoid,
    Tanh,
    Cos,
    Sin,
    Exp,
    Ln,
    Sqrt,
    Recip,
    Square,
}

impl RealFn {
    fn value(self, x: f64) -> f64 {
        match self {
            RealFn::Relu => x.max(0.0),
            RealFn::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            RealFn::Tanh => x.tanh(),
            RealFn::Cos => x.cos(),
            RealFn::Sin => x.sin(),
            RealFn::Exp => x.exp(),
            RealFn::Ln => x.ln(),
            RealFn::Sqrt => x.sqrt(),
            RealFn::Recip => 1.0 / x,
            RealFn::Square => x * x,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            RealFn::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            RealFn::Sigmoid => y * (1.0 - y),
            RealFn::Tanh => 1.0 - y * y,
            RealFn::Cos => -x.sin(),
            RealFn::Sin => x.cos(),
            RealFn::Exp => y,
            RealFn::Ln => 1.0 / x,
            RealFn::Sqrt => 0.5 / y,
            RealFn::Recip => -y * y,
            RealFn::Square => 2.0 * x,
        }
    }
}

/// A primitive with a hand-written adjoint.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// Input adjoints given the input values, output value and output adjoint.
    fn backward(&self, inputs: &[&CMat], output: &CMat, g: &CMat) -> Vec<CMat>;
}

#[derive(Debug)]
enum Op {
    Const,
    Param { offset: usize },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, C64),
    ScaleBy(NodeId, NodeId),
    Adjoint(NodeId),
    Trace(NodeId),
    RealPart(NodeId),
    Map(NodeId, RealFn),
    Hadamard(NodeId, NodeId),
    Element(NodeId, usize, usize),
    Stack(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    Sum(Vec<NodeId>),
    ParamMatrix { inputs: Vec<NodeId>, derivs: Vec<CMat> },
    Dissipate { input: NodeId, lindblad: Arc<Lindblad>, spec: DissipationSpec },
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp> },
}

impl Op {
    fn name(&self) -> String {
        match self {
            Op::Custom { op, .. } => op.name().to_string(),
            other => {
                let s = format!("{other:?}");
                s.split(['(', ' ', '{']).next().unwrap_or("op").to_string()
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: CMat,
    op: Op,
}

/// Append-only record of operations; node order is a topological order.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

impl Tape {
    /// A tape whose parameter leaves index into a vector of `n_params` reals.
    pub fn new(n_params: usize) -> Self {
        Self { nodes: Vec::new(), n_params }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn push(&mut self, value: CMat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &CMat {
        &self.nodes[id].value
    }

    /// Real part of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value.as_scalar().re
    }

    /// Constant leaf; also serves as a detached copy of another value.
    pub fn constant(&mut self, v: CMat) -> NodeId {
        self.push(v, Op::Const)
    }

    pub fn real_const(&mut self, x: f64) -> NodeId {
        self.constant(CMat::real_scalar(x))
    }

    /// Detached copy of a node's value.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id].value.clone();
        self.constant(v)
    }

    /// Trainable leaf holding `theta[offset .. offset + rows*cols]` row-major.
    pub fn param(&mut self, theta: &[f64], offset: usize, rows: usize, cols: usize) -> NodeId {
        assert!(offset + rows * cols <= self.n_params, "parameter block out of range");
        let v = CMat::from_real(rows, cols, &theta[offset..offset + rows * cols]);
        self.push(v, Op::Param { offset })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: C64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn scale_real(&mut self, a: NodeId, s: f64) -> NodeId {
        self.scale(a, c(s, 0.0))
    }

    /// `s * A` with `s` a `1 x 1` node.
    pub fn scale_by(&mut self, s: NodeId, a: NodeId) -> NodeId {
        let z = self.value(s).as_scalar();
        let v = self.value(a).scale(z);
        self.push(v, Op::ScaleBy(s, a))
    }

    pub fn adjoint(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).adjoint();
        self.push(v, Op::Adjoint(a))
    }

    pub fn trace(&mut self, a: NodeId) -> NodeId {
        let v = CMat::scalar(self.value(a).trace());
        self.push(v, Op::Trace(a))
    }

    pub fn real_part(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|z| c(z.re, 0.0));
        self.push(v, Op::RealPart(a))
    }

    pub fn map(&mut self, a: NodeId, f: RealFn) -> NodeId {
        let v = self.value(a).map(|z| c(f.value(z.re), 0.0));
        self.push(v, Op::Map(a, f))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).hadamard(self.value(b));
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn element(&mut self, a: NodeId, i: usize, j: usize) -> NodeId {
        let v = CMat::scalar(self.value(a)[(i, j)]);
        self.push(v, Op::Element(a, i, j))
    }

    /// Column vector from `1 x 1` nodes.
    pub fn stack(&mut self, items: &[NodeId]) -> NodeId {
        let v = CMat::column(items.iter().map(|&i| self.value(i).as_scalar()).collect());
        self.push(v, Op::Stack(items.to_vec()))
    }

    /// Rows `start .. start+len` of a column vector.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let src = self.value(a);
        assert_eq!(src.cols(), 1, "slice expects a column");
        let v = CMat::column(src.data()[start..start + len].to_vec());
        self.push(v, Op::Slice(a, start, len))
    }

    /// Sum of equally shaped nodes; an empty list is rejected.
    pub fn sum(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "sum of no nodes");
        let mut v = self.value(items[0]).clone();
        for &i in &items[1..] {
            v += self.value(i);
        }
        self.push(v, Op::Sum(items.to_vec()))
    }

    /// Matrix-valued function of real `1 x 1` inputs with known partials.
    pub fn param_matrix(&mut self, inputs: &[NodeId], value: CMat, derivs: Vec<CMat>) -> NodeId {
        assert_eq!(inputs.len(), derivs.len(), "one derivative per input");
        self.push(value, Op::ParamMatrix { inputs: inputs.to_vec(), derivs })
    }

    pub fn dissipate(&mut self, input: NodeId, lindblad: Arc<Lindblad>, spec: DissipationSpec) -> NodeId {
        let v = lindblad.propagate(self.value(input), spec);
        self.push(v, Op::Dissipate { input, lindblad, spec })
    }

    pub fn custom(&mut self, inputs: &[NodeId], value: CMat, op: Box<dyn CustomOp>) -> NodeId {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// `U X U^H`.
    pub fn sandwich(&mut self, u: NodeId, x: NodeId) -> NodeId {
        let ux = self.matmul(u, x);
        let ud = self.adjoint(u);
        self.matmul(ux, ud)
    }

    /// Real part of the trace.
    pub fn trace_re(&mut self, a: NodeId) -> NodeId {
        let t = self.trace(a);
        self.real_part(t)
    }

    /// Gradient of `Re(output)` (a `1 x 1` node) with respect to θ.
    pub fn backward(&self, output: NodeId) -> Result<Vec<f64>> {
        self.backward_seeded(&[(output, CMat::real_scalar(1.0))])
    }

    /// Reverse sweep from arbitrary seed adjoints.
    pub fn backward_seeded(&self, seeds: &[(NodeId, CMat)]) -> Result<Vec<f64>> {
        let mut grads: Vec<Option<CMat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (id, g) in seeds {
            accumulate(&mut grads, *id, g.clone());
            top = top.max(*id + 1);
        }
        let mut theta_grad = vec![0.0; self.n_params];
        for id in (0..top).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.is_finite() {
                return Err(Error::NonFinite { node: id, op: self.nodes[id].op.name() });
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (k, z) in g.data().iter().enumerate() {
                        theta_grad[offset + k] += z.re;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).adjoint());
                    let gb = self.value(*a).adjoint().matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale_real(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(s.conj())),
                Op::ScaleBy(s, a) => {
                    let sv = self.value(*s).as_scalar();
                    let gs = self.value(*a).inner(&g);
                    accumulate(&mut grads, *s, CMat::scalar(gs));
                    accumulate(&mut grads, *a, g.scale(sv.conj()));
                }
                Op::Adjoint(a) => accumulate(&mut grads, *a, g.adjoint()),
                Op::Trace(a) => {
                    let n = self.value(*a).rows();
                    let z = g.as_scalar();
                    accumulate(&mut grads, *a, CMat::diag(&vec![z; n]));
                }
                Op::RealPart(a) => accumulate(&mut grads, *a, g.map(|z| c(z.re, 0.0))),
                Op::Map(a, f) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let ga = CMat::from_fn(x.rows(), x.cols(), |i, j| {
                        c(f.deriv(x[(i, j)].re, y[(i, j)].re) * g[(i, j)].re, 0.0)
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(&self.value(*b).conj());
                    let gb = g.hadamard(&self.value(*a).conj());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Element(a, i, j) => {
                    let (r, cc) = self.value(*a).shape();
                    let mut ga = CMat::zeros(r, cc);
                    ga[(*i, *j)] = g.as_scalar();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Stack(items) => {
                    for (k, &it) in items.iter().enumerate() {
                        accumulate(&mut grads, it, CMat::scalar(g[(k, 0)]));
                    }
                }
                Op::Slice(a, start, len) => {
                    let n = self.value(*a).rows();
                    let mut ga = CMat::zeros(n, 1);
                    for k in 0..*len {
                        ga[(start + k, 0)] = g[(k, 0)];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(items) => {
                    for &it in items {
                        accumulate(&mut grads, it, g.clone());
                    }
                }
                Op::ParamMatrix { inputs, derivs } => {
                    for (&it, d) in inputs.iter().zip(derivs) {
                        accumulate(&mut grads, it, CMat::real_scalar(d.inner(&g).re));
                    }
                }
                Op::Dissipate { input, lindblad, spec } => {
                    accumulate(&mut grads, *input, lindblad.propagate_adjoint(&g, *spec));
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&CMat> = inputs.iter().map(|&i| self.value(i)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    for (&it, gi) in inputs.iter().zip(gs) {
                        accumulate(&mut grads, it, gi);
                    }
                }
            }
        }
        if theta_grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { node: 0, op: "parameter leaf".into() });
        }
        Ok(theta_grad)
    }
}

fn accumulate(grads: &mut [Option<CMat>], id: NodeId, g: CMat) {
    match &mut grads[id] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::jc_qubit_drive;
    use crate::qcore::HilbertLayout;

    fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut a = x.to_vec();
                a[k] += h;
                let mut b = x.to_vec();
                b[k] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    /// A function exercising most primitives at once.
    fn build(tape: &mut Tape, th: &[f64]) -> NodeId {
        let w = tape.param(th, 0, 2, 2);
        let x = tape.param(th, 4, 2, 1);
        let mut m = CMat::identity(2);
        m[(0, 1)] = c(0.3, -0.7);
        let k = tape.constant(m);
        let wk = tape.matmul(k, w);
        let y = tape.matmul(wk, x);
        let y = tape.scale(y, c(0.5, 0.25));
        let t = tape.map(x, RealFn::Tanh);
        let s = tape.map(x, RealFn::Sigmoid);
        let h = tape.hadamard(t, s);
        let z = tape.add(y, h);
        let zz = tape.adjoint(z);
        let outer = tape.matmul(z, zz);
        let tr = tape.trace_re(outer);
        let e = tape.element(x, 1, 0);
        let ex = tape.map(e, RealFn::Cos);
        let sc = tape.scale_by(ex, tr);
        let l = tape.map(sc, RealFn::Square);
        let l2 = tape.map(l, RealFn::Sqrt);
        let p = tape.stack(&[l2, e]);
        let q = tape.slice(p, 0, 2);
        let one = tape.constant(CMat::from_real(1, 2, &[1.0, -0.5]));
        let r = tape.matmul(one, q);
        tape.real_part(r)
    }

    #[test]
    fn composite_gradient_matches_finite_difference() {
        let th = [0.3, -0.2, 0.5, 0.9, 0.4, -0.6];
        let mut tape = Tape::new(6);
        let out = build(&mut tape, &th);
        let g = tape.backward(out).unwrap();
        let f = |x: &[f64]| {
            let mut t = Tape::new(6);
            let o = build(&mut t, x);
            t.scalar(o)
        };
        let num = fd(&f, &th, 1e-6);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn drive_transition_gradient() {
        // F(θ) = |<e|U_q(θ)|g>|² = sin²(θ/2), dF/dθ = sin(θ)/2
        let l = HilbertLayout::new(2, 1).unwrap();
        for th in [0.3, 1.7, 2.9] {
            let mut tape = Tape::new(1);
            let p = tape.param(&[th], 0, 1, 1);
            let gate = jc_qubit_drive(l, 0, th, 0.0);
            let zero = tape.real_const(0.0);
            let u = tape.param_matrix(&[p, zero], gate.u, gate.derivs);
            let mut g0 = CMat::zeros(4, 1);
            g0[(0, 0)] = c(1.0, 0.0);
            let psi = tape.constant(g0);
            let out = tape.matmul(u, psi);
            let amp = tape.element(out, 1, 0);
            let ampc = tape.adjoint(amp);
            let f = tape.matmul(ampc, amp);
            let f = tape.real_part(f);
            assert!((tape.scalar(f) - (th / 2.0).sin().powi(2)).abs() < 1e-14);
            let g = tape.backward(f).unwrap();
            assert!((g[0] - th.sin() / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_of_unitary_evolved_state_has_zero_gradient() {
        let l = HilbertLayout::new(3, 1).unwrap();
        let th = [0.8];
        let mut tape = Tape::new(1);
        let p = tape.param(&th, 0, 1, 1);
        let zero = tape.real_const(0.0);
        let gate = jc_qubit_drive(l, 0, th[0], 0.0);
        let u = tape.param_matrix(&[p, zero], gate.u, gate.derivs);
        let rho = tape.constant(CMat::identity(6).scale_real(1.0 / 6.0));
        let r = tape.sandwich(u, rho);
        let t = tape.trace_re(r);
        let g = tape.backward(t).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn nan_adjoint_names_node() {
        let mut tape = Tape::new(1);
        let p = tape.param(&[0.0], 0, 1, 1);
        let l = tape.map(p, RealFn::Ln);
        let err = tape.backward(l).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err:?}");
    }
}
