// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

use approx::assert_relative_eq;
use fgrape::analysis::{extract_tree_exact, rationalize_pi, TreeNode};
use fgrape::channels::{
    lattice_cdf, lindblad_rk4, measure_continuous_reparam, measure_discrete, ContinuousFamily, DissipationSpec, Lindblad,
    MeasurementFamily, Outcome,
};
use fgrape::controllers::{Carry, Controller, DecisionInput};
use fgrape::gates::{dispersive_povm, displacement, jc_interaction, jc_qubit_drive, snap, spin_rotation, DisplacementCache, Gate};
use fgrape::graddiff::{
    enumerate_record, forward_record, CoefficientMode, Ctl, Op, OutcomeSource, Program, RecordOptions, RewardObs, Tape,
    DEFAULT_BRANCH_CAP,
};
use fgrape::qcore::{c, fidelity, purity, CMat, DensityMatrix, HilbertLayout, Ket, State};
use fgrape::tasks::{
    analytic_purification_strategy, build_task, spin_fidelity_averaged, tiny_overrides, ControllerKind,
    ControllerOptions, Overrides, CATALOG,
};
use fgrape::training::{clip_gradient, train, AdamConfig, AdamState, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::PI;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_ket(rng: &mut ChaCha8Rng, n: usize) -> Ket {
    Ket::new((0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).unwrap()
}

/// Convex mixture of `k` random pure states.
fn random_density(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DensityMatrix {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut m = CMat::zeros(n, n);
    for wi in w {
        let psi = random_ket(rng, n);
        m.axpy(c(wi / total, 0.0), psi.to_density().matrix());
    }
    DensityMatrix::new(m).unwrap()
}

fn unitarity_error(g: &Gate) -> f64 {
    let n = g.u.rows();
    g.u.adjoint().matmul(&g.u).max_abs_diff(&CMat::identity(n))
}

fn derivative_error(f: impl Fn(&[f64]) -> Gate, x: &[f64]) -> f64 {
    let g = f(x);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, d) in g.derivs.iter().enumerate() {
        let mut a = x.to_vec();
        a[k] += h;
        let mut b = x.to_vec();
        b[k] -= h;
        let mut num = f(&a).u;
        num.axpy(c(-1.0, 0.0), &f(&b).u);
        let num = num.scale_real(0.5 / h);
        worst = worst.max(num.max_abs_diff(d) / d.max_abs().max(1e-3));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn trace_is_cyclic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 16);
        let b = random_matrix(&mut rng, 16);
        let ab = a.matmul(&b).trace();
        let ba = b.matmul(&a).trace();
        prop_assert!((ab - ba).norm() < 1e-12);
        prop_assert!((a.trace_product(&b) - ab).norm() < 1e-12);
    }

    #[test]
    fn densities_are_valid_and_purity_bounded(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, 6, k);
        let m = rho.matrix();
        prop_assert!(m.max_abs_diff(&m.adjoint()) < 1e-12);
        prop_assert!((m.trace().re - 1.0).abs() < 1e-12);
        let p = purity(&rho);
        prop_assert!(p <= 1.0 + 1e-12);
        // purity 1 exactly when the dominant eigenvector has fidelity 1
        let eig = fgrape::qcore::eigh(m);
        let top = eig.vectors.column_at(eig.values.len() - 1);
        let top = Ket::new(top.data().to_vec()).unwrap();
        let f = fidelity(&rho, &State::Pure(top)).unwrap();
        prop_assert_eq!((1.0 - p).abs() < 1e-8, (1.0 - f).abs() < 1e-8);
        if k == 1 {
            prop_assert!((1.0 - p).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_fidelity_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_ket(&mut rng, 8);
        let b = random_ket(&mut rng, 8);
        let ab = fidelity(&a.to_density(), &State::Pure(b.clone())).unwrap();
        let ba = fidelity(&b.to_density(), &State::Pure(a)).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn gates_are_unitary_with_correct_derivatives(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = HilbertLayout::new(6, 1).unwrap();
        let mut r = || rng.random_range(-2.0..2.0);
        let (x, y) = (r(), r());
        let phases: Vec<f64> = (0..4).map(|_| r()).collect();
        let (g, tau) = (r(), r());
        let cache = DisplacementCache::new(l).unwrap();
        let gates = [
            jc_qubit_drive(l, 0, x, y),
            jc_interaction(l, 0, x, y),
            snap(l, &phases).unwrap(),
            displacement(&cache, 0.5 * x, 0.5 * y),
            spin_rotation(g, tau),
        ];
        for gate in &gates {
            prop_assert!(unitarity_error(gate) < 1e-10);
        }
        prop_assert!(derivative_error(|v| jc_qubit_drive(l, 0, v[0], v[1]), &[x, y]) < 1e-7);
        prop_assert!(derivative_error(|v| jc_interaction(l, 0, v[0], v[1]), &[x, y]) < 1e-7);
        prop_assert!(derivative_error(|v| snap(l, v).unwrap(), &phases) < 1e-7);
        prop_assert!(derivative_error(|v| displacement(&cache, v[0], v[1]), &[0.5 * x, 0.5 * y]) < 1e-7);
        prop_assert!(derivative_error(|v| spin_rotation(g, v[0]), &[tau]) < 1e-7);
    }

    #[test]
    fn dispersive_outcomes_apply_the_sinusoidal_mask(seed in any::<u64>(), gamma in -PI..PI, delta in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = HilbertLayout::cavity(10);
        let pops: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = pops.iter().sum();
        let rho = DensityMatrix::new(CMat::real_diag(&pops.iter().map(|p| p / total).collect::<Vec<_>>())).unwrap();
        let povm = dispersive_povm(l, gamma, delta);
        let fam = MeasurementFamily::discrete(vec![1, -1], vec![povm.plus.u.clone(), povm.minus.u.clone()]).unwrap();
        let mask = |n: usize, m: f64| (gamma * n as f64 + 0.5 * delta + 0.25 * PI * (1.0 - m)).cos().powi(2);
        let p_plus: f64 = (0..10).map(|n| rho.matrix()[(n, n)].re * mask(n, 1.0)).sum();
        prop_assume!(p_plus > 1e-6 && p_plus < 1.0 - 1e-6);
        let mut channel = CMat::zeros(10, 10);
        for (u, m, pm) in [(0.5 * p_plus, 1.0, p_plus), (p_plus + 0.5 * (1.0 - p_plus), -1.0, 1.0 - p_plus)] {
            let ev = measure_discrete(&rho, &fam, u).unwrap();
            prop_assert_eq!(ev.outcome, Outcome::Discrete(m as i32));
            prop_assert!((ev.probability - pm).abs() < 1e-12);
            for n in 0..10 {
                let expect = rho.matrix()[(n, n)].re * mask(n, m) / pm;
                prop_assert!((ev.post_state.matrix()[(n, n)].re - expect).abs() < 1e-12);
            }
            channel.axpy(c(ev.probability, 0.0), ev.post_state.matrix());
        }
        let direct = &povm.plus.u.sandwich(rho.matrix()) + &povm.minus.u.sandwich(rho.matrix());
        prop_assert!(channel.max_abs_diff(&direct) < 1e-10);
    }

    #[test]
    fn unconditional_channel_for_coherent_states(seed in any::<u64>(), gamma in -PI..PI, delta in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = HilbertLayout::new(5, 1).unwrap();
        let rho = random_density(&mut rng, l.dim(), 2);
        let povm = dispersive_povm(l, gamma, delta);
        let fam = MeasurementFamily::discrete(vec![1, -1], vec![povm.plus.u.clone(), povm.minus.u.clone()]).unwrap();
        let p_plus = povm.plus.u.sandwich(rho.matrix()).trace().re;
        prop_assume!(p_plus > 1e-6 && p_plus < 1.0 - 1e-6);
        let mut channel = CMat::zeros(l.dim(), l.dim());
        for u in [0.5 * p_plus, p_plus + 0.5 * (1.0 - p_plus)] {
            let ev = measure_discrete(&rho, &fam, u).unwrap();
            DensityMatrix::new(ev.post_state.matrix().clone()).unwrap();
            channel.axpy(c(ev.probability, 0.0), ev.post_state.matrix());
        }
        let direct = &povm.plus.u.sandwich(rho.matrix()) + &povm.minus.u.sandwich(rho.matrix());
        prop_assert!(channel.max_abs_diff(&direct) < 1e-10);
    }

    #[test]
    fn clipping_bounds_hold(g in proptest::collection::vec(-10.0f64..10.0, 1..20), cv in 0.01f64..2.0, cn in 0.01f64..3.0) {
        let out = clip_gradient(&g, cv, cn);
        prop_assert!(out.iter().all(|x| x.abs() <= cv + 1e-15));
        prop_assert!(out.iter().map(|x| x * x).sum::<f64>().sqrt() <= cn * (1.0 + 1e-12));
    }

    #[test]
    fn rationalize_returns_minimal_denominator(x in -2.0 * PI..2.0 * PI) {
        let tol = 0.01 * PI;
        let brute = (1..=16u64).find_map(|q| {
            let p = (x / PI * q as f64).round();
            ((x - p * PI / q as f64).abs() <= tol).then_some(q)
        });
        let got = rationalize_pi(x, 16, tol);
        prop_assert_eq!(got.map(|(_, q)| q), brute);
        if let Some((p, q)) = got {
            prop_assert!((x - p as f64 * PI / q as f64).abs() <= tol);
        }
    }
}

#[test]
fn clipping_order_is_value_then_norm() {
    // norm-first would give [0.5, 0.0333]
    assert_eq!(clip_gradient(&[3.0, 0.1], 0.5, 1.0), vec![0.5, 0.1]);
    let out = clip_gradient(&[3.0, 3.0], 0.5, 0.5);
    assert_relative_eq!(out[0], 0.5 / 2f64.sqrt(), epsilon = 1e-15);
}

#[test]
fn returns_equal_the_sum_of_rewards() {
    for name in CATALOG {
        let t = build_task(name, &tiny_overrides(name).unwrap()).unwrap();
        let ctl = t.controller(t.default_controller, &ControllerOptions { hidden: vec![4], ..Default::default() });
        let th = ctl.init(1).values;
        for seed in 0..5 {
            let r = forward_record(&t.program, &ctl, &th, OutcomeSource::Sample(seed), RecordOptions::default()).unwrap();
            assert_eq!(r.trajectory.rewards.iter().sum::<f64>(), r.trajectory.ret, "{name}");
        }
    }
}

#[test]
fn every_task_runs_with_every_controller_kind() {
    let kinds = [
        ControllerKind::Table,
        ControllerKind::Memoryless,
        ControllerKind::Constrained,
        ControllerKind::Dense,
        ControllerKind::Gru,
    ];
    for name in CATALOG {
        let t = build_task(name, &tiny_overrides(name).unwrap()).unwrap();
        for kind in kinds {
            let ctl = t.controller(kind, &ControllerOptions { hidden: vec![4], ..Default::default() });
            let th = ctl.init(2).values;
            let a = forward_record(&t.program, &ctl, &th, OutcomeSource::Sample(4), RecordOptions::default())
                .unwrap_or_else(|e| panic!("{name} with {kind:?}: {e}"));
            let b = forward_record(&t.program, &ctl, &th, OutcomeSource::Sample(4), RecordOptions::default()).unwrap();
            assert!(a.trajectory.ret.is_finite());
            assert_eq!(a.trajectory.controls, b.trajectory.controls, "{name} with {kind:?}");
        }
    }
}

#[test]
fn reparametrized_readout_matches_binned_distribution() {
    let l = HilbertLayout::qubit();
    let fam = MeasurementFamily::qubit_readout(l, 0, 0.7).unwrap();
    let MeasurementFamily::Continuous(cf) = &fam else { panic!("continuous family expected") };
    let cf: &ContinuousFamily = cf;
    let rho = DensityMatrix::new(CMat::real_diag(&[0.35, 0.65])).unwrap();
    let dens = cf.lattice_density(cf.populations(rho.matrix()));
    let (cdf, _) = lattice_cdf(&cf.lattice, &dens);
    let edges: Vec<usize> = (0..=40).map(|i| i * (cf.lattice.len() - 1) / 40).collect();
    let expected: Vec<f64> = edges.windows(2).map(|w| cdf[w[1]] - cdf[w[0]]).collect();
    let n = 100_000;
    let mut counts = vec![0usize; expected.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..n {
        let Outcome::Continuous(m) = measure_continuous_reparam(&rho, &fam, rng.random()).unwrap().outcome else {
            panic!("continuous outcome expected")
        };
        let k = edges.windows(2).position(|w| m <= cf.lattice[w[1]]).unwrap_or(expected.len() - 1);
        counts[k] += 1;
    }
    // pool sparse tail bins so every expected count is at least 5
    let (mut stat, mut dof, mut pool_o, mut pool_e) = (0.0, 0usize, 0.0, 0.0);
    for (o, e) in counts.iter().zip(&expected) {
        pool_o += *o as f64;
        pool_e += e * n as f64;
        if pool_e >= 5.0 {
            stat += (pool_o - pool_e).powi(2) / pool_e;
            dof += 1;
            pool_o = 0.0;
            pool_e = 0.0;
        }
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.05, "χ² = {stat:.1} with {} dof, p = {p:.3}", dof - 1);
}

#[test]
fn dropping_past_rewards_keeps_the_mean_and_lowers_variance() {
    let l = HilbertLayout::new(4, 1).unwrap();
    let ops = vec![
        Op::Decide,
        Op::QubitDrive { slot: 0, re: Ctl::Control(0), im: Ctl::Fixed(0.2) },
        Op::JcInteraction { slot: 0, re: Ctl::Control(1), im: Ctl::Fixed(0.0) },
        Op::Reward { obs: RewardObs::Purity, weight: 1.0 },
        Op::DispersiveMeasure { gamma: Ctl::Control(2), delta: Ctl::Control(3) },
        Op::Decide,
        Op::JcInteraction { slot: 0, re: Ctl::Control(1), im: Ctl::Fixed(0.0) },
        Op::Reward { obs: RewardObs::Purity, weight: 1.0 },
        Op::DispersiveMeasure { gamma: Ctl::Control(2), delta: Ctl::Control(3) },
        Op::Reward { obs: RewardObs::Purity, weight: 2.0 },
    ];
    let mut rho = CMat::zeros(8, 8);
    for (i, p) in [(0, 0.5), (2, 0.3), (4, 0.2)] {
        rho[(i, i)] = c(p, 0.0);
    }
    let p = Program::new(l, rho, ops, 4).unwrap();
    let ctl = Controller::Table(fgrape::controllers::LookupTable::new(p.decision_depths(), 2, 4, fgrape::controllers::TableMode::Full));
    let th = ctl.init(7).values;
    let n = 20_000;
    let (mut fut, mut full) = (Vec::new(), Vec::new());
    for s in 0..n {
        let r = forward_record(&p, &ctl, &th, OutcomeSource::Sample(s), RecordOptions::default()).unwrap();
        fut.push(r.gradient(&r.trajectory.coefficients(CoefficientMode::FutureReturn)).unwrap());
        full.push(r.gradient(&r.trajectory.coefficients(CoefficientMode::FullReturn)).unwrap());
    }
    let stats = |rows: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
        let k = rows[0].len();
        let m: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let v = (0..k).map(|j| rows.iter().map(|r| (r[j] - m[j]).powi(2)).sum::<f64>() / (n - 1) as f64).collect();
        (m, v)
    };
    let (mf, vf) = stats(&fut);
    let (ma, va) = stats(&full);
    let exact = enumerate_record(&p, &ctl, &th, DEFAULT_BRANCH_CAP).unwrap().gradient().unwrap();
    for j in 0..th.len() {
        let se_f = (vf[j] / n as f64).sqrt();
        let se_a = (va[j] / n as f64).sqrt();
        assert!((mf[j] - exact[j]).abs() <= 3.0 * se_f.max(1e-12), "future, component {j}");
        assert!((ma[j] - exact[j]).abs() <= 3.0 * se_a.max(1e-12), "full, component {j}");
    }
    assert!(vf.iter().sum::<f64>() <= va.iter().sum::<f64>());
}

#[test]
fn resampled_spin_coupling_matches_quadrature() {
    let mut o = Overrides::new();
    o.insert("steps".into(), serde_json::json!(2.0));
    let t = build_task("spin_uncertain", &o).unwrap();
    let ctl = t.controller(ControllerKind::Constrained, &ControllerOptions::default());
    let th = vec![2.7, 2.2];
    let n = 100_000u64;
    let rets: Vec<f64> = (0..n)
        .map(|s| forward_record(&t.program, &ctl, &th, OutcomeSource::Sample(s), RecordOptions::default()).unwrap().trajectory.ret)
        .collect();
    let mean = rets.iter().sum::<f64>() / n as f64;
    let se = (rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
    let c = &t.program.coupling;
    let exact = spin_fidelity_averaged(&th, c.mean, c.std, c.quadrature_nodes);
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (SE {se})");
}

#[test]
fn enumeration_training_is_deterministic_and_sampling_agrees() {
    let mut o = Overrides::new();
    o.insert("steps".into(), serde_json::json!(2.0));
    let t = build_task("spin_uncertain", &o).unwrap();
    let ctl = t.controller(ControllerKind::Constrained, &ControllerOptions { table_init: (PI, PI + 1.0), ..Default::default() });
    let cfg = TrainConfig { iterations: 400, enumeration: true, deterministic: true, ..TrainConfig::for_task(&t, 3) };
    let a = train(&t, &ctl, ctl.init(3).values, &cfg).unwrap();
    let b = train(&t, &ctl, ctl.init(3).values, &cfg).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.theta, b.theta);
    let mc = TrainConfig { enumeration: false, batch_size: 500, ..cfg };
    let m = train(&t, &ctl, ctl.init(3).values, &mc).unwrap();
    let fe = t.exact_enumeration_return(&ctl, &a.theta).unwrap().0;
    let fm = t.exact_enumeration_return(&ctl, &m.theta).unwrap().0;
    assert!((fe - fm).abs() < 5e-3, "enumeration {fe} vs sampling {fm}");
}

#[test]
fn adam_decay_shrinks_the_step() {
    let mut s = AdamState::new(1, AdamConfig { decay: Some(0.5), ..AdamConfig::default() });
    let lr0 = s.learning_rate();
    let mut th = vec![0.0];
    s.step(&mut th, &[1.0]).unwrap();
    assert!(s.learning_rate() < lr0);
}

/// Supervised fit of a GRU to the controls of a table, by Adam on the
/// squared error over every history.
fn clone_table(table: &Controller, table_theta: &[f64], gru: &Controller, seed: u64, j: usize) -> Vec<f64> {
    let mut histories: Vec<Vec<usize>> = vec![vec![]];
    for _ in 1..j {
        histories = histories.iter().flat_map(|h| [0, 1].map(|k| [h.clone(), vec![k]].concat())).collect();
    }
    let paths: Vec<Vec<usize>> = histories;
    let targets: Vec<Vec<Vec<f64>>> = paths
        .iter()
        .map(|p| {
            let hs: Vec<Vec<usize>> = (0..j).map(|d| p[..d].to_vec()).collect();
            table.controls_along(table_theta, &hs, &last_outcomes(p, j)).unwrap()
        })
        .collect();
    let mut theta = gru.init(seed).values;
    let mut adam = AdamState::new(
        theta.len(),
        AdamConfig { learning_rate: 0.01, clip_value: f64::INFINITY, clip_norm: f64::INFINITY, ..AdamConfig::default() },
    );
    for _ in 0..6000 {
        let mut tape = Tape::new(theta.len());
        let mut bound = gru.bind(&mut tape, &theta).unwrap();
        let mut terms = Vec::new();
        for (p, target) in paths.iter().zip(&targets) {
            let mut carry = Carry::default();
            let last = last_outcomes(p, j);
            for d in 0..j {
                let input = DecisionInput { index: d, n_decisions: j, history: &p[..d], last_outcome: last[d], rho: None };
                let ids = gru.decide(&mut bound, &mut tape, &theta, &mut carry, &input, None).unwrap();
                for (i, &id) in ids.iter().enumerate() {
                    let t = tape.real_const(target[d][i]);
                    let diff = tape.sub(id, t);
                    terms.push(tape.hadamard(diff, diff));
                }
            }
        }
        let loss = tape.sum(&terms);
        let neg = tape.scale_real(loss, -1.0);
        let g = tape.backward(neg).unwrap();
        adam.step(&mut theta, &g).unwrap();
    }
    theta
}

fn last_outcomes(path: &[usize], j: usize) -> Vec<f64> {
    (0..j).map(|d| if d == 0 { 0.0 } else if path[d - 1] == 0 { 1.0 } else { -1.0 }).collect()
}

fn max_tree_gap(a: &TreeNode, b: &TreeNode) -> f64 {
    let own = a.controls.iter().zip(&b.controls).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    a.children.iter().fold(own, |m, (k, ca)| m.max(max_tree_gap(ca, &b.children[k])))
}

#[test]
fn gru_clone_of_a_table_has_the_same_tree() {
    let mut o = Overrides::new();
    o.insert("measurements".into(), serde_json::json!(2.0));
    let t = build_task("purification", &o).unwrap();
    let (table, th) = analytic_purification_strategy(2).unwrap();
    let gru = t.controller(ControllerKind::Gru, &ControllerOptions { hidden: vec![12], ..Default::default() });
    let gth = clone_table(&table, &th, &gru, 1, 2);
    let ta = extract_tree_exact(&t.program, &table, &th, 64).unwrap();
    let tb = extract_tree_exact(&t.program, &gru, &gth, 64).unwrap();
    let gap = max_tree_gap(ta.root.as_ref().unwrap(), tb.root.as_ref().unwrap());
    assert!(gap < 1e-3, "largest control gap {gap:.2e}");
}

#[test]
fn rk4_converges_at_fourth_order() {
    let l = HilbertLayout::cavity(6);
    let lb = Lindblad::new(l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rho = random_density(&mut rng, 6, 2);
    let run = |n: usize| lindblad_rk4(&rho, DissipationSpec::with_steps(1.5, n).unwrap(), &lb).into_matrix();
    let reference = run(1024);
    let steps = [4usize, 8, 16, 32];
    let pts: Vec<(f64, f64)> = steps.iter().map(|&n| ((n as f64).ln(), run(n).max_abs_diff(&reference).ln())).collect();
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / k, sy / k);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!(-slope >= 3.8, "fitted order {}", -slope);
}
