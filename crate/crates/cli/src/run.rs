// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

use crate::config::{self, RunConfig};
use crate::Common;
use anyhow::{bail, Context, Result};
use fgrape::analysis::{self, StrategyFile};
use fgrape::controllers::Controller;
use fgrape::graddiff::{
    adjoint_gradient, enumerate_record, finite_diff_check, forward_record, rel_error, AdjointMode, CoefficientMode,
    OutcomeSource, RecordOptions, DEFAULT_BRANCH_CAP,
};
use fgrape::qcore::{wigner_grid, DensityMatrix, PhaseGrid};
use fgrape::tasks::{
    analytic_purification_strategy, build_task, tiny_overrides, ControllerKind, ControllerOptions, RewardMode,
    TaskSpec, CATALOG,
};
use fgrape::training::{self, AdamConfig, BaselineConfig, TrainConfig, TrainResult};
use fgrape::Error;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// Load the config file with `--set` and flag overrides applied on top.
/// `base` supplies keys (task and settings) that the file may omit.
fn load(common: &Common, base: Option<toml::Table>) -> Result<RunConfig> {
    let mut table = base.unwrap_or_default();
    if let Some(p) = &common.config {
        table.extend(config::read_table(p)?);
    }
    for s in &common.set {
        let (k, v) = config::parse_set(s)?;
        table.insert(k, v);
    }
    if let Some(s) = common.seed {
        let s = i64::try_from(s).context("--seed must fit in a signed 64-bit integer")?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    if let Some(o) = &common.out {
        table.insert("out".into(), toml::Value::String(o.display().to_string()));
    }
    if let Some(w) = common.workers {
        table.insert("workers".into(), toml::Value::Integer(w as i64));
    }
    if common.deterministic {
        table.insert("deterministic".into(), toml::Value::Boolean(true));
    }
    let mut cfg = config::resolve(table)?;
    if cfg.deterministic {
        cfg.workers = Some(1);
    }
    Ok(cfg)
}

fn controller_for(task: &TaskSpec, cfg: &RunConfig) -> Result<Controller> {
    let kind = match &cfg.controller {
        Some(k) => ControllerKind::parse(k)?,
        None => task.default_controller,
    };
    let opts = ControllerOptions { hidden: cfg.hidden.clone(), dropout: cfg.dropout, table_init: (cfg.init_lo, cfg.init_hi) };
    Ok(task.controller(kind, &opts))
}

fn coefficient_mode(s: &str) -> Result<CoefficientMode> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .with_context(|| format!("unknown coefficients '{s}'; use future_return, full_return or uncorrected"))
}

fn train_config(task: &TaskSpec, cfg: &RunConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        iterations: cfg.iterations,
        batch_size: cfg.batch_size.unwrap_or(task.batch_size),
        seed: cfg.seed(),
        adam: AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            clip_value: cfg.clip_value,
            clip_norm: cfg.clip_norm,
            decay: cfg.learning_rate_decay,
        },
        coefficients: coefficient_mode(&cfg.coefficients)?,
        baseline: cfg.baseline.then(|| BaselineConfig {
            rate: cfg.value_rate,
            discount_factor: cfg.discount_factor,
            harmonic: cfg.harmonic_rate,
        }),
        target_return: cfg.target_return,
        enumeration: cfg.enumeration.unwrap_or(task.enumeration),
        workers: cfg.workers,
        deterministic: cfg.deterministic,
    })
}

fn write_curve(path: &Path, r: &TrainResult) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for p in &r.curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

fn write_wigner(path: &Path, task: &TaskSpec, rho: &DensityMatrix, cfg: &RunConfig) -> Result<()> {
    let grid = PhaseGrid::square(cfg.wigner_half_width, cfg.wigner_points);
    let w = wigner_grid(rho, task.layout(), &grid);
    let mut text = format!(
        "# x: {} {} {}\n# p: {} {} {}\n# rows: p ascending, columns: x ascending\n",
        grid.x_min, grid.x_max, grid.nx, grid.p_min, grid.p_max, grid.np
    );
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for row in &w {
        wr.write_record(row.iter().map(|x| x.to_string()))?;
    }
    text.push_str(&String::from_utf8(wr.into_inner()?)?);
    fs::write(path, text)?;
    Ok(())
}

fn final_state(task: &TaskSpec, ctl: &Controller, theta: &[f64], seed: u64) -> Result<DensityMatrix> {
    let r = forward_record(&task.program, ctl, theta, OutcomeSource::Sample(seed), RecordOptions::default())?;
    Ok(DensityMatrix::from_matrix_unchecked(r.trajectory.final_state))
}

fn describe(task: &TaskSpec, mean: f64) -> String {
    match task.reward_mode {
        RewardMode::FinalPurity => format!("mean purity {mean:.8} (impurity {:.8})", 1.0 - mean),
        RewardMode::FinalFidelity => format!("mean fidelity {mean:.8} (infidelity {:.3e})", 1.0 - mean),
        _ => format!("mean return {mean:.8}"),
    }
}

pub fn train(common: &Common) -> Result<bool> {
    let cfg = load(common, None)?;
    let task = build_task(&cfg.task, &cfg.overrides)?;
    let ctl = controller_for(&task, &cfg)?;
    let tc = train_config(&task, &cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let result = if cfg.best_of > 1 {
        let seeds: Vec<u64> = (0..cfg.best_of as u64).map(|k| cfg.seed().wrapping_add(k)).collect();
        let (best, runs) = training::train_best_of(&task, &ctl, &seeds, &tc, |r| {
            Ok(r.curve.last().map(|p| p.mean_return).unwrap_or(f64::NEG_INFINITY))
        })?;
        for (k, (_, score)) in runs.iter().enumerate() {
            println!("run {k} (seed {}): final mean return {score:.8}", seeds[k]);
        }
        runs.into_iter().nth(best).expect("index in range").0
    } else {
        training::train(&task, &ctl, ctl.init(cfg.seed()).values, &tc)?
    };
    if cfg.emit_curve {
        write_curve(&cfg.out.join("curve.csv"), &result)?;
    }
    if cfg.emit_strategy {
        let s = StrategyFile::new(&task.name, cfg.overrides.clone(), ctl.clone(), result.theta.clone());
        analysis::export_strategy(&s, &cfg.out.join("strategy.json"))?;
    }
    if cfg.emit_tree {
        if task.program.has_continuous() {
            log::warn!("task {} has continuous outcomes; no tree written", task.name);
        } else {
            let tree = analysis::extract_tree(&task.program, &ctl, &result.theta, cfg.rollouts, cfg.seed())?;
            analysis::export_tree(&tree, &cfg.out.join("tree.json"))?;
        }
    }
    if cfg.emit_wigner {
        let rho = final_state(&task, &ctl, &result.theta, cfg.seed())?;
        write_wigner(&cfg.out.join("wigner_final.csv"), &task, &rho, &cfg)?;
    }
    let last = result.curve.last().map(|p| p.mean_return).unwrap_or(f64::NAN);
    println!(
        "task {}: {} after {} iterations ({:?})",
        task.name,
        describe(&task, last),
        result.curve.len(),
        result.stop
    );
    Ok(true)
}

/// The strategy file's task and settings as a base table.
fn strategy_base(s: &StrategyFile) -> Result<toml::Table> {
    let mut t = toml::Table::new();
    t.insert("task".into(), toml::Value::String(s.task.clone()));
    for (k, v) in &s.overrides {
        let tv = match v {
            serde_json::Value::String(x) => toml::Value::String(x.clone()),
            serde_json::Value::Bool(b) => toml::Value::Boolean(*b),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => toml::Value::Integer(i),
                None => toml::Value::Float(n.as_f64().context("numeric setting")?),
            },
            other => bail!("strategy setting '{k}' has unsupported value {other}"),
        };
        t.insert(k.clone(), tv);
    }
    Ok(t)
}

#[derive(Serialize)]
struct EvalReport {
    task: String,
    rollouts: usize,
    mc_mean: Option<f64>,
    mc_standard_error: Option<f64>,
    exact_mean: Option<f64>,
    exact_std: Option<f64>,
}

pub fn eval(common: &Common, strategy: Option<&Path>, analytic: bool, rollouts: Option<usize>) -> Result<bool> {
    let (cfg, task, ctl, theta) = if analytic {
        let cfg = load(common, None)?;
        if cfg.task != "purification" {
            bail!("--analytic is only available for the purification task");
        }
        let task = build_task(&cfg.task, &cfg.overrides)?;
        let j = task.program.n_measurements();
        let (ctl, theta) = analytic_purification_strategy(j)?;
        (cfg, task, ctl, theta)
    } else {
        let Some(path) = strategy else { bail!("eval needs --strategy PATH or --analytic") };
        let s = analysis::import_strategy(path)?;
        let cfg = load(common, Some(strategy_base(&s)?))?;
        let task = build_task(&cfg.task, &cfg.overrides)?;
        (cfg, task, s.controller, s.theta)
    };
    if theta.len() != ctl.n_params() {
        bail!("strategy has {} parameters, controller needs {}", theta.len(), ctl.n_params());
    }
    let n = rollouts.unwrap_or(cfg.rollouts);
    let mut report =
        EvalReport { task: task.name.clone(), rollouts: n, mc_mean: None, mc_standard_error: None, exact_mean: None, exact_std: None };
    if n > 0 {
        let batch = training::sample_batch(&task.program, &ctl, &theta, n, cfg.seed(), 0, cfg.workers)?;
        let r: Vec<f64> = batch.iter().map(|b| b.trajectory.ret).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let se = (var / n as f64).sqrt();
        println!("monte carlo over {n} rollouts: {} ± {se:.2e}", describe(&task, mean));
        report.mc_mean = Some(mean);
        report.mc_standard_error = Some(se);
    }
    match enumerate_record(&task.program, &ctl, &theta, DEFAULT_BRANCH_CAP) {
        Ok(e) => {
            println!("exact enumeration over {} branches: {}", e.branches, describe(&task, e.mean));
            report.exact_mean = Some(e.mean);
            report.exact_std = Some(e.std());
        }
        Err(e @ (Error::BranchCap { .. } | Error::Unsupported(_))) => log::info!("no exact evaluation: {e}"),
        Err(e) => return Err(e.into()),
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(true)
}

pub fn extract_tree(common: &Common, strategy: &Path, rollouts: Option<usize>) -> Result<bool> {
    let s = analysis::import_strategy(strategy)?;
    let cfg = load(common, Some(strategy_base(&s)?))?;
    let task = build_task(&cfg.task, &cfg.overrides)?;
    let n = rollouts.unwrap_or(cfg.rollouts);
    let tree = analysis::extract_tree(&task.program, &s.controller, &s.theta, n, cfg.seed())?;
    fs::create_dir_all(&cfg.out)?;
    analysis::export_tree(&tree, &cfg.out.join("tree.json"))?;
    print!("{}", tree.render());
    Ok(true)
}

/// Threshold on the relative error between the tape and central differences.
const FD_LIMIT: f64 = 1e-6;
const ADJOINT_LIMIT: f64 = 1e-8;

pub fn grad_check(common: &Common, all: bool, full_size: bool) -> Result<bool> {
    let names: Vec<String> = if all {
        CATALOG.iter().map(|s| s.to_string()).collect()
    } else {
        vec![load(common, None)?.task]
    };
    let mut ok = true;
    for name in names {
        let mut base = toml::Table::new();
        base.insert("task".into(), toml::Value::String(name.clone()));
        if !full_size {
            for (k, v) in tiny_overrides(&name)? {
                base.insert(k, config::parse_value(&v.to_string()));
            }
        }
        let mut c = common.clone();
        if all {
            c.set.retain(|s| !s.starts_with("task"));
        }
        let cfg = load(&c, Some(base))?;
        let task = build_task(&cfg.task, &cfg.overrides)?;
        let mut opts_cfg = cfg.clone();
        if !full_size && opts_cfg.hidden == vec![30] {
            opts_cfg.hidden = vec![4];
        }
        let ctl = controller_for(&task, &opts_cfg)?;
        let theta = ctl.init(cfg.seed()).values;
        let mut fd_max = 0.0f64;
        let mut adj_max: Option<f64> = Some(0.0);
        for k in 0..cfg.check_seeds {
            let seed = cfg.seed().wrapping_add(k);
            let fd = finite_diff_check(&task.program, &ctl, &theta, cfg.fd_step, seed, CoefficientMode::FutureReturn)?;
            fd_max = fd_max.max(fd.max_rel_error);
            let r = forward_record(&task.program, &ctl, &theta, OutcomeSource::Sample(seed), RecordOptions::default())?;
            let co = r.trajectory.coefficients(CoefficientMode::FutureReturn);
            let tape = r.gradient(&co)?;
            let t = &r.trajectory;
            match adjoint_gradient(&task.program, &ctl, &theta, &t.draws, t.coupling, &co, AdjointMode::Backward) {
                Ok(a) => adj_max = adj_max.map(|m| m.max(rel_error(&a, &tape))),
                Err(Error::Unsupported(_)) => adj_max = None,
                Err(e) => return Err(e.into()),
            }
        }
        let adj_txt = adj_max.map(|a| format!("{a:.2e}")).unwrap_or_else(|| "n/a".into());
        let pass = fd_max < FD_LIMIT && adj_max.is_none_or(|a| a < ADJOINT_LIMIT);
        println!(
            "{name}: max rel. error {fd_max:.2e} vs finite differences, {adj_txt} vs adjoint [{}]",
            if pass { "ok" } else { "FAIL" }
        );
        ok &= pass;
    }
    Ok(ok)
}
