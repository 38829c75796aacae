// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Batch sampling, the surrogate gradient estimator, Adam with clipping, a
//! tabular value baseline and the outer training loop.

use crate::controllers::Controller;
use crate::error::{Error, Result};
use crate::graddiff::{
    enumerate_record, forward_record, CoefficientMode, OutcomeSource, Program, RecordOptions, Recorded, Trajectory,
    DEFAULT_BRANCH_CAP,
};
use crate::tasks::TaskSpec;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;

/// Adam hyperparameters and clipping thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_value: f64,
    pub clip_norm: f64,
    /// Per-step multiplicative learning-rate decay; `None` keeps it fixed.
    pub decay: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            clip_value: 0.5,
            clip_norm: 1.0,
            decay: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Clip each component to `±clip_value`, then rescale to norm `≤ clip_norm`.
pub fn clip_gradient(g: &[f64], clip_value: f64, clip_norm: f64) -> Vec<f64> {
    let mut out: Vec<f64> = g.iter().map(|x| x.clamp(-clip_value, clip_value)).collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        out.iter_mut().for_each(|x| *x *= s);
    }
    out
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        match c.decay {
            Some(d) => c.learning_rate * d.powf(self.step as f64),
            None => c.learning_rate,
        }
    }

    /// One ascent step on `theta` along the clipped gradient `g`.
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::DimMismatch(format!(
                "Adam state has {} entries, θ {} and gradient {}",
                self.m.len(),
                theta.len(),
                g.len()
            )));
        }
        let lr = self.learning_rate();
        let c = self.config.clone();
        let g = clip_gradient(g, c.clip_value, c.clip_norm);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..theta.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            theta[i] += lr * mh / (vh.sqrt() + c.epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, theta: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    state.step(&mut out, g)?;
    Ok(out)
}

/// Seed of trajectory `index` in iteration `iteration` of a run seeded with
/// `seed`.
pub fn trajectory_seed(seed: u64, iteration: u64, index: u64) -> u64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key).next_u64()
}

/// Run `f` on a pool of `workers` threads (`None`: rayon's default).
fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Independent trajectories with per-index seeds; the result does not
/// depend on the number of workers.
pub fn sample_batch(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    batch_size: usize,
    seed: u64,
    iteration: u64,
    workers: Option<usize>,
) -> Result<Vec<Recorded>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    with_pool(workers, || {
        (0..batch_size)
            .into_par_iter()
            .map(|i| {
                let s = trajectory_seed(seed, iteration, i as u64);
                forward_record(program, controller, theta, OutcomeSource::Sample(s), RecordOptions { training: true })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Tabular `V` over measurement histories.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub values: HashMap<Vec<usize>, f64>,
    pub counts: HashMap<Vec<usize>, usize>,
    pub rate: f64,
    pub discount_factor: f64,
    /// Use `1/visits` per state instead of the fixed rate.
    pub harmonic: bool,
}

impl ValueTable {
    pub fn new(rate: f64, discount_factor: f64) -> Self {
        Self { values: HashMap::new(), counts: HashMap::new(), rate, discount_factor, harmonic: false }
    }

    pub fn get(&self, history: &[usize]) -> f64 {
        self.values.get(history).copied().unwrap_or(0.0)
    }

    /// `A_k = r_k + γV(s_k) − V(s_{k−1})` for measurements `k = 1..=J`,
    /// with `V = 0` after the last one.
    pub fn advantages(&self, t: &Trajectory) -> Vec<f64> {
        let j = t.n_measurements();
        (1..=j)
            .map(|k| {
                let next = if k == j { 0.0 } else { self.get(&t.history[..k]) };
                t.segment_rewards[k] + self.discount_factor * next - self.get(&t.history[..k - 1])
            })
            .collect()
    }
}

/// One synchronous Bellman sweep: each visited state moves toward the batch
/// mean of its targets.
pub fn value_update(table: &mut ValueTable, batch: &[&Trajectory]) {
    let mut sums: HashMap<Vec<usize>, (f64, usize)> = HashMap::new();
    for t in batch {
        let j = t.n_measurements();
        if t.history.len() != j {
            continue;
        }
        for k in 1..=j {
            let next = if k == j { 0.0 } else { table.get(&t.history[..k]) };
            let target = t.segment_rewards[k] + table.discount_factor * next;
            let e = sums.entry(t.history[..k - 1].to_vec()).or_insert((0.0, 0));
            e.0 += target;
            e.1 += 1;
        }
    }
    for (s, (sum, n)) in sums {
        let mean = sum / n as f64;
        let seen = table.counts.entry(s.clone()).or_insert(0);
        *seen += n;
        let alpha = if table.harmonic { n as f64 / *seen as f64 } else { table.rate };
        let v = table.values.entry(s).or_insert(0.0);
        *v += alpha * (mean - *v);
    }
}

/// How the score-term coefficients are formed.
#[derive(Clone, Copy, Debug)]
pub enum Coefficients<'a> {
    Mode(CoefficientMode),
    Advantage(&'a ValueTable),
}

impl Coefficients<'_> {
    pub fn of(&self, t: &Trajectory) -> Vec<f64> {
        match self {
            Coefficients::Mode(m) => t.coefficients(*m),
            Coefficients::Advantage(v) => v.advantages(t),
        }
    }
}

fn dump(t: &Trajectory) -> String {
    serde_json::to_string(t).unwrap_or_else(|e| format!("<unserializable: {e}>"))
}

/// Gradient of one trajectory's surrogate, rejecting non-finite values.
pub fn trajectory_gradient(r: &Recorded, coeffs: Coefficients<'_>) -> Result<Vec<f64>> {
    let g = match r.gradient(&coeffs.of(&r.trajectory)) {
        Ok(g) => g,
        Err(Error::NonFinite { node, op }) => {
            return Err(Error::NonFiniteGradient(format!("node {node} ({op}); {}", dump(&r.trajectory))))
        }
        Err(e) => return Err(e),
    };
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient(dump(&r.trajectory)));
    }
    Ok(g)
}

/// Mean of per-trajectory surrogate gradients.
pub fn estimate_gradient(batch: &[Recorded], coeffs: Coefficients<'_>) -> Result<Vec<f64>> {
    let grads: Vec<Vec<f64>> = batch.iter().map(|r| trajectory_gradient(r, coeffs)).collect::<Result<_>>()?;
    mean_of(&grads)
}

fn mean_of(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = grads.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let mut acc = vec![0.0; first.len()];
    for g in grads {
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }
    let n = grads.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Sampled trajectories reduced to what the loop needs; the tapes are
/// dropped inside the workers.
pub struct BatchEstimate {
    pub trajectories: Vec<Trajectory>,
    pub gradient: Vec<f64>,
}

impl BatchEstimate {
    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.ret).collect()
    }
}

/// Sample and differentiate a batch in one parallel pass.
#[allow(clippy::too_many_arguments)]
pub fn sample_gradient(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    batch_size: usize,
    seed: u64,
    iteration: u64,
    coeffs: Coefficients<'_>,
    workers: Option<usize>,
) -> Result<BatchEstimate> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let parts = with_pool(workers, || {
        (0..batch_size)
            .into_par_iter()
            .map(|i| {
                let s = trajectory_seed(seed, iteration, i as u64);
                let r = forward_record(
                    program,
                    controller,
                    theta,
                    OutcomeSource::Sample(s),
                    RecordOptions { training: true },
                )?;
                let g = trajectory_gradient(&r, coeffs)?;
                Ok((r.trajectory, g))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let (trajectories, grads): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(BatchEstimate { gradient: mean_of(&grads)?, trajectories })
}

/// Value baseline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub rate: f64,
    pub discount_factor: f64,
    pub harmonic: bool,
}

/// Outer-loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub coefficients: CoefficientMode,
    pub baseline: Option<BaselineConfig>,
    /// Stop once the mean return reaches this value.
    pub target_return: Option<f64>,
    /// Use exact branch enumeration instead of sampling.
    pub enumeration: bool,
    pub workers: Option<usize>,
    /// Record `wall_ms = 0` so curves are reproducible byte for byte.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            coefficients: CoefficientMode::FutureReturn,
            baseline: None,
            target_return: None,
            enumeration: false,
            workers: None,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for `task`: its batch size and evaluation mode.
    pub fn for_task(task: &TaskSpec, seed: u64) -> Self {
        Self { batch_size: task.batch_size, enumeration: task.enumeration, seed, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    TargetReached,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub theta: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub adam: AdamState,
    pub stop: StopReason,
    /// Highest per-iteration mean return and the θ that produced it.
    pub best_return: f64,
    pub best_theta: Vec<f64>,
}

/// Mean and standard deviation of the return, with its gradient, at θ.
pub fn evaluate(
    program: &Program,
    controller: &Controller,
    theta: &[f64],
    cfg: &TrainConfig,
    iteration: u64,
    value: Option<&ValueTable>,
) -> Result<(f64, f64, Vec<f64>, Vec<Trajectory>)> {
    if cfg.enumeration {
        let e = enumerate_record(program, controller, theta, DEFAULT_BRANCH_CAP)?;
        let g = e.gradient()?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("enumerated gradient at iteration {iteration}")));
        }
        return Ok((e.mean, e.std(), g, Vec::new()));
    }
    let coeffs = match value {
        Some(v) => Coefficients::Advantage(v),
        None => Coefficients::Mode(cfg.coefficients),
    };
    let b = sample_gradient(program, controller, theta, cfg.batch_size, cfg.seed, iteration, coeffs, cfg.workers)?;
    let r = b.returns();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt(), b.gradient, b.trajectories))
}

/// Gradient ascent from `theta0` until the iteration budget or target return.
pub fn train(task: &TaskSpec, controller: &Controller, theta0: Vec<f64>, cfg: &TrainConfig) -> Result<TrainResult> {
    train_program(&task.program, controller, theta0, cfg)
}

pub fn train_program(
    program: &Program,
    controller: &Controller,
    theta0: Vec<f64>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if theta0.len() != controller.n_params() {
        return Err(Error::Controller(format!("θ has {} entries, controller needs {}", theta0.len(), controller.n_params())));
    }
    let start = Instant::now();
    let mut theta = theta0;
    let mut adam = AdamState::new(theta.len(), cfg.adam.clone());
    let mut value = cfg.baseline.as_ref().map(|b| {
        let mut v = ValueTable::new(b.rate, b.discount_factor);
        v.harmonic = b.harmonic;
        v
    });
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::NEG_INFINITY, theta.clone());
    let mut stop = StopReason::MaxIterations;
    for it in 0..cfg.iterations {
        let (mean, std, g, trajs) = evaluate(program, controller, &theta, cfg, it as u64, value.as_ref())?;
        if !mean.is_finite() {
            return Err(Error::NonFiniteReturn(format!("mean return {mean} at iteration {it}")));
        }
        let wall_ms = if cfg.deterministic { 0 } else { start.elapsed().as_millis() as u64 };
        curve.push(CurvePoint { iteration: it, mean_return: mean, std_return: std, wall_ms });
        log::debug!("iteration {it}: mean return {mean:.6} ± {std:.6}");
        if mean > best.0 {
            best = (mean, theta.clone());
        }
        if cfg.target_return.is_some_and(|t| mean >= t) {
            stop = StopReason::TargetReached;
            break;
        }
        adam.step(&mut theta, &g)?;
        if let Some(v) = value.as_mut() {
            let refs: Vec<&Trajectory> = trajs.iter().collect();
            value_update(v, &refs);
        }
    }
    Ok(TrainResult { theta, curve, adam, stop, best_return: best.0, best_theta: best.1 })
}

/// Train from `K` seeded initializations and keep the run whose final
/// evaluation is highest. Returns the winning index and all results.
pub fn train_best_of(
    task: &TaskSpec,
    controller: &Controller,
    seeds: &[u64],
    cfg: &TrainConfig,
    score: impl Fn(&TrainResult) -> Result<f64>,
) -> Result<(usize, Vec<(TrainResult, f64)>)> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let theta0 = controller.init(s).values;
        let c = TrainConfig { seed: s, ..cfg.clone() };
        let r = train(task, controller, theta0, &c)?;
        let v = score(&r)?;
        runs.push((r, v));
    }
    let best = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Invalid("best-of needs at least one seed".into()))?;
    Ok((best, runs))
}
