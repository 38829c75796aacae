// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Decision trees extracted from trained controllers, rational multiples of
//! π, and versioned strategy/tree files.

use crate::controllers::Controller;
use crate::error::{Error, Result};
use crate::graddiff::{forward_record, Draw, OutcomeSource, Program, RecordOptions};
use crate::training::trajectory_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

pub const STRATEGY_SCHEMA: &str = "fgrape.strategy";
pub const TREE_SCHEMA: &str = "fgrape.tree";
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_MAX_DEN: u64 = 16;
pub const DEFAULT_PI_TOL: f64 = 0.01 * PI;

/// Repeat visits of one history must produce controls this close.
const DETERMINISM_TOL: f64 = 1e-9;

/// Smallest-denominator `p/q` with `|x − πp/q| ≤ tol`, `q ≤ max_den`.
pub fn rationalize_pi(x: f64, max_den: u64, tol: f64) -> Option<(i64, u64)> {
    if !x.is_finite() {
        return None;
    }
    for q in 1..=max_den.max(1) {
        let c = x * q as f64 / PI;
        let mut best: Option<i64> = None;
        for p in [c.floor() as i64, c.ceil() as i64] {
            if (x - PI * p as f64 / q as f64).abs() <= tol && best.is_none_or(|b| p.abs() < b.abs()) {
                best = Some(p);
            }
        }
        if let Some(p) = best {
            return Some((p, q));
        }
    }
    None
}

pub fn format_pi_fraction(p: i64, q: u64) -> String {
    match (p, q) {
        (0, _) => "0".into(),
        (1, 1) => "π".into(),
        (-1, 1) => "-π".into(),
        (p, 1) => format!("{p}π"),
        (1, q) => format!("π/{q}"),
        (-1, q) => format!("-π/{q}"),
        (p, q) => format!("{p}π/{q}"),
    }
}

/// Label of a discrete outcome as used in tree keys.
pub fn outcome_key(label: i32) -> String {
    format!("{label:+}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Controls of every decision taken at this history.
    pub controls: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_fraction: Option<Vec<Option<(i64, u64)>>>,
    pub visit_probability: f64,
    pub visits: usize,
    #[serde(default)]
    pub children: BTreeMap<String, TreeNode>,
}

impl TreeNode {
    fn empty() -> Self {
        Self { controls: Vec::new(), pi_fraction: None, visit_probability: 0.0, visits: 0, children: BTreeMap::new() }
    }

    /// The most visited path from this node, as outcome keys.
    pub fn most_probable_path(&self) -> Vec<(String, &TreeNode)> {
        let mut out = Vec::new();
        let mut n = self;
        while let Some((k, c)) = n.children.iter().max_by(|a, b| a.1.visit_probability.total_cmp(&b.1.visit_probability)) {
            out.push((k.clone(), c));
            n = c;
        }
        out
    }

    pub fn n_nodes(&self) -> usize {
        1 + self.children.values().map(TreeNode::n_nodes).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub schema: String,
    pub version: u32,
    pub n_rollouts: usize,
    /// `None` when no rollouts were run.
    pub root: Option<TreeNode>,
}

impl DecisionTree {
    /// Annotate every node with rationalized controls.
    pub fn rationalize(&mut self, max_den: u64, tol: f64) {
        fn go(n: &mut TreeNode, max_den: u64, tol: f64) {
            n.pi_fraction = Some(n.controls.iter().map(|&x| rationalize_pi(x, max_den, tol)).collect());
            n.children.values_mut().for_each(|c| go(c, max_den, tol));
        }
        if let Some(r) = self.root.as_mut() {
            go(r, max_den, tol);
        }
    }

    /// Indented text, one node per line.
    pub fn render(&self) -> String {
        fn line(out: &mut String, key: &str, n: &TreeNode, depth: usize) {
            let ctl: Vec<String> = n
                .controls
                .iter()
                .enumerate()
                .map(|(i, &x)| match n.pi_fraction.as_ref().and_then(|f| f.get(i).copied().flatten()) {
                    Some((p, q)) => format_pi_fraction(p, q),
                    None => format!("{x:.4}"),
                })
                .collect();
            let _ = writeln!(out, "{}{key} p={:.4} [{}]", "  ".repeat(depth), n.visit_probability, ctl.join(", "));
            for (k, c) in &n.children {
                line(out, k, c, depth + 1);
            }
        }
        let mut out = String::new();
        match &self.root {
            Some(r) => line(&mut out, "root", r, 0),
            None => out.push_str("(empty tree)\n"),
        }
        out
    }
}

fn insert(
    root: &mut TreeNode,
    keys: &[String],
    depths: &[usize],
    controls: &[Vec<f64>],
    n_meas: usize,
) -> Result<()> {
    let mut node = root;
    node.visits += 1;
    for level in 0..=n_meas {
        let here: Vec<f64> =
            depths.iter().zip(controls).filter(|(d, _)| **d == level).flat_map(|(_, c)| c.iter().copied()).collect();
        if node.visits == 1 {
            node.controls = here;
        } else if node.controls.len() != here.len()
            || node.controls.iter().zip(&here).any(|(a, b)| (a - b).abs() > DETERMINISM_TOL)
        {
            return Err(Error::Controller(format!(
                "controller-determinism violation after outcomes {:?}: {:?} vs {:?}",
                &keys[..level],
                node.controls,
                here
            )));
        }
        if level == keys.len() || !depths.iter().any(|&d| d > level) {
            break;
        }
        node = node.children.entry(keys[level].clone()).or_insert_with(TreeNode::empty);
        node.visits += 1;
    }
    Ok(())
}

fn set_probabilities(n: &mut TreeNode, total: usize) {
    n.visit_probability = n.visits as f64 / total as f64;
    n.children.values_mut().for_each(|c| set_probabilities(c, total));
}

/// Run `n_rollouts` trajectories and collect the controls along each
/// observed history with empirical visit frequencies.
pub fn extract_tree(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    n_rollouts: usize,
    seed: u64,
) -> Result<DecisionTree> {
    if program.has_continuous() {
        return Err(Error::Unsupported("decision trees need discrete outcomes".into()));
    }
    let mut tree = DecisionTree { schema: TREE_SCHEMA.into(), version: SCHEMA_VERSION, n_rollouts, root: None };
    if n_rollouts == 0 {
        return Ok(tree);
    }
    let runs = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let s = trajectory_seed(seed, u64::MAX, i as u64);
            let r = forward_record(program, controller, theta, OutcomeSource::Sample(s), RecordOptions::default())?;
            Ok(r.trajectory)
        })
        .collect::<Result<Vec<_>>>()?;
    let depths = program.decision_depths();
    let n_meas = program.n_measurements();
    let mut root = TreeNode::empty();
    for t in &runs {
        let keys: Vec<String> = t
            .outcomes
            .iter()
            .map(|o| match o {
                crate::channels::Outcome::Discrete(l) => outcome_key(*l),
                crate::channels::Outcome::Continuous(_) => unreachable!("checked above"),
            })
            .collect();
        insert(&mut root, &keys, &depths, &t.controls, n_meas)?;
    }
    set_probabilities(&mut root, n_rollouts);
    tree.root = Some(root);
    tree.rationalize(DEFAULT_MAX_DEN, DEFAULT_PI_TOL);
    Ok(tree)
}

/// The tree with exact branch probabilities, replaying every outcome
/// sequence at the mean coupling. Branches with zero probability are left
/// out.
pub fn extract_tree_exact(program: &Program, controller: &Controller, theta: &[f64], max_branches: usize) -> Result<DecisionTree> {
    if program.has_continuous() {
        return Err(Error::Unsupported("decision trees need discrete outcomes".into()));
    }
    let n_meas = program.n_measurements();
    let n_branches = 1usize.checked_shl(n_meas as u32).unwrap_or(usize::MAX);
    if n_branches > max_branches {
        return Err(Error::BranchCap { branches: n_branches, cap: max_branches });
    }
    let depths = program.decision_depths();
    let mut root = TreeNode::empty();
    let mut probs: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for b in 0..n_branches {
        let draws: Vec<Draw> = (0..n_meas).map(|k| Draw::Index((b >> (n_meas - 1 - k)) & 1)).collect();
        let src = OutcomeSource::Forced { draws: &draws, coupling: program.coupling.mean };
        let r = match forward_record(program, controller, theta, src, RecordOptions::default()) {
            Ok(r) => r,
            Err(Error::Contract(m)) if m.contains("zero probability") => continue,
            Err(e) => return Err(e),
        };
        let t = r.trajectory;
        let p = t.log_prob.exp();
        if p == 0.0 {
            continue;
        }
        let keys: Vec<String> = t
            .outcomes
            .iter()
            .map(|o| match o {
                crate::channels::Outcome::Discrete(l) => outcome_key(*l),
                crate::channels::Outcome::Continuous(_) => unreachable!("checked above"),
            })
            .collect();
        insert(&mut root, &keys, &depths, &t.controls, n_meas)?;
        for k in 0..=keys.len() {
            *probs.entry(keys[..k].to_vec()).or_insert(0.0) += p;
        }
    }
    fn assign(n: &mut TreeNode, path: &mut Vec<String>, probs: &BTreeMap<Vec<String>, f64>) {
        n.visit_probability = probs.get(path).copied().unwrap_or(0.0);
        for (k, c) in n.children.iter_mut() {
            path.push(k.clone());
            assign(c, path, probs);
            path.pop();
        }
    }
    assign(&mut root, &mut Vec::new(), &probs);
    let mut tree = DecisionTree { schema: TREE_SCHEMA.into(), version: SCHEMA_VERSION, n_rollouts: 0, root: Some(root) };
    tree.rationalize(DEFAULT_MAX_DEN, DEFAULT_PI_TOL);
    Ok(tree)
}

/// A frozen controller with its parameters and the task it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyFile {
    pub schema: String,
    pub version: u32,
    pub task: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, serde_json::Value>,
    pub controller: Controller,
    pub theta: Vec<f64>,
}

impl StrategyFile {
    pub fn new(task: &str, overrides: BTreeMap<String, serde_json::Value>, controller: Controller, theta: Vec<f64>) -> Self {
        Self { schema: STRATEGY_SCHEMA.into(), version: SCHEMA_VERSION, task: task.into(), overrides, controller, theta }
    }
}

fn check_header(v: &serde_json::Value, schema: &str) -> Result<()> {
    let got = v.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    if got != schema {
        return Err(Error::Schema(format!("expected schema {schema:?}, found {got:?}")));
    }
    match v.get("version").and_then(|s| s.as_u64()) {
        Some(n) if n == SCHEMA_VERSION as u64 => Ok(()),
        Some(n) => Err(Error::Schema(format!("unsupported {schema} version {n}; this build reads version {SCHEMA_VERSION}"))),
        None => Err(Error::Schema(format!("{schema} document has no version"))),
    }
}

fn to_text<T: Serialize>(x: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(x)?;
    s.push('\n');
    Ok(s)
}

fn from_text<T: for<'de> Deserialize<'de>>(text: &str, schema: &str) -> Result<T> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    check_header(&v, schema)?;
    Ok(serde_json::from_value(v)?)
}

pub fn strategy_to_string(s: &StrategyFile) -> Result<String> {
    to_text(s)
}

pub fn strategy_from_str(text: &str) -> Result<StrategyFile> {
    let s: StrategyFile = from_text(text, STRATEGY_SCHEMA)?;
    if s.theta.len() != s.controller.n_params() {
        return Err(Error::Schema(format!(
            "strategy has {} parameters, its controller needs {}",
            s.theta.len(),
            s.controller.n_params()
        )));
    }
    Ok(s)
}

pub fn tree_to_string(t: &DecisionTree) -> Result<String> {
    to_text(t)
}

pub fn tree_from_str(text: &str) -> Result<DecisionTree> {
    from_text(text, TREE_SCHEMA)
}

pub fn export_strategy(s: &StrategyFile, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, strategy_to_string(s)?)?)
}

pub fn import_strategy(path: &Path) -> Result<StrategyFile> {
    strategy_from_str(&std::fs::read_to_string(path)?)
}

pub fn export_tree(t: &DecisionTree, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, tree_to_string(t)?)?)
}

pub fn import_tree(path: &Path) -> Result<DecisionTree> {
    tree_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::oracles::analytic_purification_strategy;
    use crate::tasks::{build_task, ControllerKind, ControllerOptions, Overrides};

    #[test]
    fn rationalize_examples() {
        assert_eq!(rationalize_pi(1.5708, 16, DEFAULT_PI_TOL), Some((1, 2)));
        assert_eq!(rationalize_pi(0.7854, 16, DEFAULT_PI_TOL), Some((1, 4)));
        assert_eq!(rationalize_pi(0.9, 16, DEFAULT_PI_TOL), Some((2, 7)));
        assert_eq!(rationalize_pi(0.9, 6, DEFAULT_PI_TOL), None);
        assert_eq!(rationalize_pi(-PI / 8.0, 16, DEFAULT_PI_TOL), Some((-1, 8)));
        assert_eq!(rationalize_pi(0.0, 16, DEFAULT_PI_TOL), Some((0, 1)));
        // both 0 and 1 are within tolerance at q = 1
        assert_eq!(rationalize_pi(0.5 * PI, 1, 0.6 * PI), Some((0, 1)));
    }

    fn purification(j: usize) -> crate::tasks::TaskSpec {
        let mut o = Overrides::new();
        o.insert("measurements".into(), serde_json::json!(j));
        build_task("purification", &o).unwrap()
    }

    #[test]
    fn analytic_purification_tree() {
        let t = purification(2);
        let (ctl, th) = analytic_purification_strategy(2).unwrap();
        let tree = extract_tree(&t.program, &ctl, &th, 400, 3).unwrap();
        let root = tree.root.as_ref().unwrap();
        assert_eq!(root.pi_fraction.as_ref().unwrap()[0], Some((1, 2)));
        assert_eq!(root.children.len(), 2);
        for c in root.children.values() {
            assert_eq!(c.pi_fraction.as_ref().unwrap()[0], Some((1, 4)));
            assert!(c.children.is_empty());
        }
        let s: f64 = root.children.values().map(|c| c.visit_probability).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let exact = extract_tree_exact(&t.program, &ctl, &th, 64).unwrap();
        let s: f64 = exact.root.as_ref().unwrap().children.values().map(|c| c.visit_probability).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(tree.render().contains("π/4"));
    }

    #[test]
    fn memoryless_siblings_agree_and_empty_tree() {
        let t = purification(3);
        let ctl = t.controller(ControllerKind::Memoryless, &ControllerOptions::default());
        let th = ctl.init(2).values;
        let tree = extract_tree(&t.program, &ctl, &th, 200, 1).unwrap();
        let root = tree.root.unwrap();
        let level: Vec<&TreeNode> = root.children.values().collect();
        for w in level.windows(2) {
            assert_eq!(w[0].controls, w[1].controls);
        }
        assert!(extract_tree(&t.program, &ctl, &th, 0, 1).unwrap().root.is_none());
    }

    #[test]
    fn files_round_trip_and_check_versions() {
        let t = purification(2);
        let (ctl, th) = analytic_purification_strategy(2).unwrap();
        let s = StrategyFile::new("purification", Overrides::new(), ctl.clone(), th.clone());
        let a = strategy_to_string(&s).unwrap();
        let b = strategy_to_string(&strategy_from_str(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        let tree = extract_tree(&t.program, &ctl, &th, 50, 0).unwrap();
        let a = tree_to_string(&tree).unwrap();
        assert!(a.contains("\"+1\"") && a.contains("\"-1\""));
        let back = tree_from_str(&a).unwrap();
        assert_eq!(tree_to_string(&back).unwrap(), a);
        let bad = a.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(tree_from_str(&bad), Err(Error::Schema(m)) if m.contains("version 7")));
    }
}
