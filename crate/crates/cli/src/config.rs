// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Flat TOML run configuration: run keys and task settings share one table.

use anyhow::{anyhow, bail, Context, Result};
use fgrape::tasks::{task_settings, Overrides, CATALOG};
use serde::Deserialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Keys that configure the run itself; everything else must be a setting of
/// the selected task.
pub const RUN_KEYS: &[&str] = &[
    "task",
    "seed",
    "controller",
    "hidden",
    "dropout",
    "init_lo",
    "init_hi",
    "learning_rate",
    "learning_rate_decay",
    "beta1",
    "beta2",
    "epsilon",
    "clip_value",
    "clip_norm",
    "batch_size",
    "iterations",
    "target_return",
    "coefficients",
    "baseline",
    "value_rate",
    "discount_factor",
    "harmonic_rate",
    "enumeration",
    "best_of",
    "out",
    "workers",
    "deterministic",
    "emit_curve",
    "emit_strategy",
    "emit_tree",
    "emit_wigner",
    "rollouts",
    "wigner_half_width",
    "wigner_points",
    "fd_step",
    "check_seeds",
];

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    pub seed: Option<u64>,
    pub controller: Option<String>,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub init_lo: f64,
    pub init_hi: f64,
    pub learning_rate: f64,
    pub learning_rate_decay: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_value: f64,
    pub clip_norm: f64,
    pub batch_size: Option<usize>,
    pub iterations: usize,
    pub target_return: Option<f64>,
    pub coefficients: String,
    pub baseline: bool,
    pub value_rate: f64,
    pub discount_factor: f64,
    pub harmonic_rate: bool,
    pub enumeration: Option<bool>,
    pub best_of: usize,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub deterministic: bool,
    pub emit_curve: bool,
    pub emit_strategy: bool,
    pub emit_tree: bool,
    pub emit_wigner: bool,
    pub rollouts: usize,
    pub wigner_half_width: f64,
    pub wigner_points: usize,
    pub fd_step: f64,
    pub check_seeds: u64,
    /// Task settings, filled from the non-run keys.
    #[serde(skip)]
    pub overrides: Overrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: String::new(),
            seed: None,
            controller: None,
            hidden: vec![30],
            dropout: 0.0,
            init_lo: 0.0,
            init_hi: PI,
            learning_rate: 0.01,
            learning_rate_decay: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            clip_value: 0.5,
            clip_norm: 1.0,
            batch_size: None,
            iterations: 2000,
            target_return: None,
            coefficients: "future_return".into(),
            baseline: false,
            value_rate: 0.1,
            discount_factor: 1.0,
            harmonic_rate: false,
            enumeration: None,
            best_of: 1,
            out: PathBuf::from("out"),
            workers: None,
            deterministic: false,
            emit_curve: true,
            emit_strategy: true,
            emit_tree: false,
            emit_wigner: false,
            rollouts: 10_000,
            wigner_half_width: 4.0,
            wigner_points: 81,
            fd_step: 1e-5,
            check_seeds: 6,
            overrides: Overrides::new(),
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.expect("resolve checks the seed")
    }
}

fn initials(key: &str) -> String {
    key.split('_').filter_map(|w| w.chars().next()).collect()
}

/// Closest known key: abbreviations by word initials first, then the best
/// Jaro–Winkler match above 0.75.
pub fn suggest<'a>(key: &str, known: &[&'a str]) -> Option<&'a str> {
    if let Some(k) = known.iter().find(|k| initials(k) == key) {
        return Some(k);
    }
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(s, _)| *s >= 0.75)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

/// Parse the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn parse_set(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got '{s}'"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn to_json(v: &toml::Value) -> Result<serde_json::Value> {
    Ok(match v {
        toml::Value::String(s) => serde_json::Value::String(s.clone()),
        toml::Value::Integer(i) => serde_json::json!(*i),
        toml::Value::Float(f) => serde_json::json!(*f),
        toml::Value::Boolean(b) => serde_json::Value::Bool(*b),
        other => bail!("task settings must be scalars, got {other}"),
    })
}

/// Split a flat table into run keys and task settings, rejecting unknown
/// keys, and fill defaults.
pub fn resolve(table: toml::Table) -> Result<RunConfig> {
    let task = match table.get("task") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(other) => bail!("'task' must be a string, got {other}"),
        None => bail!("missing key 'task'; one of: {}", CATALOG.join(", ")),
    };
    let settings = match task_settings(&task) {
        Ok(s) => s,
        Err(_) => {
            let hint = suggest(&task, &CATALOG).map(|s| format!(" (did you mean '{s}'?)")).unwrap_or_default();
            bail!("unknown task '{task}'{hint}; known tasks: {}", CATALOG.join(", "));
        }
    };
    let mut run = toml::Table::new();
    let mut overrides = Overrides::new();
    for (k, v) in table {
        if RUN_KEYS.contains(&k.as_str()) {
            run.insert(k, v);
        } else if settings.iter().any(|s| *s == k) {
            overrides.insert(k.clone(), to_json(&v).with_context(|| format!("setting '{k}'"))?);
        } else {
            let mut known: Vec<&str> = RUN_KEYS.to_vec();
            known.extend(settings.iter().map(String::as_str));
            let hint = suggest(&k, &known).map(|s| format!("; did you mean '{s}'?")).unwrap_or_default();
            bail!("unknown key '{k}'{hint}");
        }
    }
    let mut cfg: RunConfig = run.try_into().context("invalid configuration")?;
    if cfg.seed.is_none() {
        bail!("missing key 'seed': every run needs an explicit seed");
    }
    cfg.overrides = overrides;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(s: &str) -> toml::Table {
        toml::from_str(s).unwrap()
    }

    #[test]
    fn suggestions() {
        assert_eq!(suggest("lr", RUN_KEYS), Some("learning_rate"));
        assert_eq!(suggest("iteration", RUN_KEYS), Some("iterations"));
        assert_eq!(suggest("zzzz", RUN_KEYS), None);
        let e = resolve(table("task = 'purification'\nseed = 1\nlr = 0.1")).unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
    }

    #[test]
    fn resolution() {
        let c = resolve(table("task = 'purification'\nseed = 1")).unwrap();
        assert_eq!(c.iterations, 2000);
        assert!(c.overrides.is_empty());
        let c = resolve(table("task = 'stabilize_jc'\nseed = 1\nkappa_t_m = 0.05\nsteps = 4")).unwrap();
        assert_eq!(c.overrides["kappa_t_m"], serde_json::json!(0.05));
        assert!(resolve(table("task = 'purification'")).unwrap_err().to_string().contains("seed"));
        assert!(resolve(table("task = 'purification'\nseed = 1\niterations = 'many'")).is_err());
        assert!(resolve(table("task = 'purifcation'\nseed = 1")).unwrap_err().to_string().contains("purification"));
    }

    #[test]
    fn set_values() {
        assert_eq!(parse_set("steps=4").unwrap().1, toml::Value::Integer(4));
        assert_eq!(parse_set("target=fock:2").unwrap().1, toml::Value::String("fock:2".into()));
        assert_eq!(parse_set("baseline = true").unwrap().1, toml::Value::Boolean(true));
        assert!(parse_set("nothing").is_err());
    }
}
