use super::*;
use crate::distsim::{Execution, NoiseConfig, ScenarioConfig, Simulation};
use crate::graph::{FactorKey, FactorSpec, KeyedDropout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn node(id: u32) -> VarKey {
    VarKey::Node { id }
}

fn linear(key: u32, adjacency: &[u32], coefficients: Vec<DMatrix<f64>>, offset: &[f64], info: DMatrix<f64>) -> FactorSpec {
    FactorSpec {
        key: FactorKey::Node { id: key },
        owner: 0,
        model: FactorModel::Linear {
            coefficients,
            offset: DVector::from_column_slice(offset),
        },
        noise_lambda: info,
        adjacency: adjacency.iter().map(|&i| node(i)).collect(),
        reg: None,
    }
}

fn value(s: &Solution, id: u32) -> DVector<f64> {
    s.estimates[&node(id)].log().unwrap().into_inner()
}

/// Linear chain over R^2 with one owner per variable, plus its dense solution.
fn linear_chain(seed: u64, n: u32) -> (Graph, DVector<f64>) {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut h = DMatrix::zeros(n as usize * d, n as usize * d);
    let mut rhs = DVector::zeros(n as usize * d);
    for i in 0..n {
        let init = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        g.add_variable(node(i), i, ManifoldPoint::rn(&init)).unwrap();
    }
    let mut add = |g: &mut Graph, key: u32, vars: &[u32], a: Vec<DMatrix<f64>>, b: [f64; 2]| {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let info = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
        let mut big = DMatrix::zeros(d, n as usize * d);
        for (v, ai) in vars.iter().zip(&a) {
            big.view_mut((0, *v as usize * d), (d, d)).copy_from(ai);
        }
        h += big.transpose() * &info * &big;
        rhs += big.transpose() * &info * DVector::from_column_slice(&b);
        g.add_factor(linear(key, vars, a, &b, info)).unwrap();
    };
    add(&mut g, 100, &[0], vec![DMatrix::identity(d, d)], [0.5, -0.5]);
    for i in 0..n - 1 {
        let a0 = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.1]);
        let a1 = -DMatrix::<f64>::identity(d, d);
        add(&mut g, i, &[i, i + 1], vec![a0, a1], [i as f64 * 0.3, 1.0 - i as f64 * 0.2]);
    }
    let x = h.cholesky().unwrap().solve(&rhs);
    (g, x)
}

#[test]
fn solvers_agree_with_dense_solution_on_a_linear_tree() {
    let n = 5;
    let (mut g, truth) = linear_chain(3, n);
    let lm = solve_lm(
        &g,
        &LmOptions {
            max_iters: 1,
            lambda0: 0.0,
            tol: 0.0,
        },
        None,
    )
    .unwrap();
    assert_eq!(lm.report.iterations(), 1);
    let gs = solve_block_gs(&g, &BlockOptions { max_sweeps: 500, omega: 1.0, tol: 1e-12 }, None).unwrap();
    let sor = solve_block_sor(&g, 500, 1.3, None).unwrap();
    assert!(gs.report.converged);
    for k in 0..2 * n {
        g.iterate(k as u64, &KeyedDropout::none());
    }
    for i in 0..n {
        let expect = truth.rows(i as usize * 2, 2);
        let gbp = g.estimate(&node(i)).unwrap().log().unwrap().into_inner();
        for (name, got) in [("lm", value(&lm, i)), ("gs", value(&gs, i)), ("sor", value(&sor, i)), ("gbp", gbp)] {
            assert!((got - expect).amax() < 1e-6, "{name} off at node {i}");
        }
    }
}

/// `H = [[2,1],[1,2]]`, `g = [4,3]`: two scalar blocks, one per owner.
fn two_blocks() -> Graph {
    let one = || DMatrix::identity(1, 1);
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[0.0])).unwrap();
    g.add_variable(node(1), 1, ManifoldPoint::rn(&[0.0])).unwrap();
    g.add_factor(linear(0, &[0], vec![one()], &[1.0], one())).unwrap();
    g.add_factor(linear(1, &[1], vec![one()], &[0.0], one())).unwrap();
    g.add_factor(linear(2, &[0, 1], vec![one(), one()], &[3.0], one())).unwrap();
    g
}

#[test]
fn gauss_seidel_sweeps_by_hand() {
    let g = two_blocks();
    let expected = [(2.0, 0.5), (1.75, 0.625), (1.6875, 0.65625)];
    for (sweeps, (a, b)) in (1..=3).zip(expected) {
        let s = solve_block_gs(&g, &BlockOptions { max_sweeps: sweeps, omega: 1.0, tol: 0.0 }, None).unwrap();
        assert!((value(&s, 0)[0] - a).abs() < 1e-12, "sweep {sweeps}");
        assert!((value(&s, 1)[0] - b).abs() < 1e-12, "sweep {sweeps}");
    }
    let s = solve_block_gs(&g, &BlockOptions::default(), None).unwrap();
    assert!((value(&s, 0)[0] - 5.0 / 3.0).abs() < 1e-8);
    assert!((value(&s, 1)[0] - 2.0 / 3.0).abs() < 1e-8);
}

#[test]
fn sor_relaxes_each_block_step() {
    let g = two_blocks();
    let s = solve_block_sor(&g, 1, 1.5, None).unwrap();
    // δ0 = 1.5·2 = 3, δ1 = 1.5·(3 - 3)/2 = 0
    assert!((value(&s, 0)[0] - 3.0).abs() < 1e-12);
    assert!(value(&s, 1)[0].abs() < 1e-12);
    assert_eq!(solve_block_sor(&g, 1, 0.0, None).unwrap_err(), SolverError::InvalidOmega(0.0));
    assert!(solve_block_sor(&g, 1, 2.5, None).is_err());
}

#[test]
fn single_block_converges_in_one_sweep() {
    let (mut g, truth) = linear_chain(5, 4);
    for i in 0..4 {
        g.variable_mut(&node(i)).unwrap().owner = 7;
    }
    let s = solve_block_gs(&g, &BlockOptions { max_sweeps: 1, omega: 1.0, tol: 0.0 }, None).unwrap();
    for i in 0..4 {
        assert!((value(&s, i) - truth.rows(i as usize * 2, 2)).amax() < 1e-9);
    }
}

#[test]
fn singular_block_is_skipped_and_counted() {
    let mut g = two_blocks();
    g.add_variable(node(2), 2, ManifoldPoint::rn(&[0.25])).unwrap();
    g.add_factor(linear(3, &[2], vec![DMatrix::zeros(1, 1)], &[0.0], DMatrix::identity(1, 1)))
        .unwrap();
    let s = solve_block_gs(&g, &BlockOptions { max_sweeps: 3, omega: 1.0, tol: 0.0 }, None).unwrap();
    assert_eq!(s.report.skipped_blocks, 3);
    assert_eq!(value(&s, 2)[0], 0.25);
    assert!(matches!(
        solve_lm(&g, &LmOptions { max_iters: 3, lambda0: 0.0, tol: 0.0 }, None),
        Err(SolverError::Singular { .. })
    ));
}

#[test]
fn fixed_variables_stay_put() {
    let mut g = two_blocks();
    g.set_fixed(&node(0), true).unwrap();
    let s = solve_lm(&g, &LmOptions::default(), None).unwrap();
    assert_eq!(value(&s, 0)[0], 0.0);
    // x1 minimises (x1)² + (3 - x1)²
    assert!((value(&s, 1)[0] - 1.5).abs() < 1e-8);
}

#[test]
fn variable_prior_enters_the_objective() {
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[1.0])).unwrap();
    // N⁻¹(η=4, Λ=2) at the estimate: mean offset 2, so the minimum of prior alone is 3
    g.set_prior(
        &node(0),
        crate::gaussian::CanonicalGaussian::new(DVector::from_element(1, 4.0), DMatrix::from_element(1, 1, 2.0)).unwrap(),
    )
    .unwrap();
    g.add_factor(linear(0, &[0], vec![DMatrix::identity(1, 1)], &[6.0], DMatrix::from_element(1, 1, 1.0)))
        .unwrap();
    let s = solve_lm(&g, &LmOptions::default(), None).unwrap();
    // (2·3 + 1·6) / 3
    assert!((value(&s, 0)[0] - 4.0).abs() < 1e-8);
}

fn scenario_graph(noise: NoiseConfig, n_motions: usize, seed: u64) -> (Simulation, Graph) {
    let cfg = ScenarioConfig {
        n_robots: 4,
        n_motions,
        seed,
        noise,
        execution: Execution::Centralized,
        ..Default::default()
    };
    let mut sim = Simulation::new(cfg.generate_world(), cfg);
    for t in 0..=n_motions {
        sim.build_step(t).unwrap();
    }
    let g = sim.graphs()[0].clone();
    (sim, g)
}

#[test]
fn zero_noise_recovers_the_truth_from_perturbed_estimates() {
    let (sim, mut g) = scenario_graph(NoiseConfig::zero(), 6, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let keys: Vec<VarKey> = g
        .variables()
        .iter()
        .filter(|v| matches!(v.key, VarKey::Body { t, .. } if t > 0))
        .map(|v| v.key)
        .collect();
    for k in &keys {
        let v = g.variable_mut(k).unwrap();
        let tau: Vec<f64> = (0..6).map(|_| rng.random_range(-0.05..0.05)).collect();
        v.estimate = v.estimate.oplus(&tau).unwrap();
    }
    let s = solve_lm(&g, &LmOptions::default(), None).unwrap();
    assert!(s.report.initial_energy > 1e-4);
    assert!(*s.report.energy.last().unwrap() < 1e-10);
    for k in &keys {
        let VarKey::Body { robot, t } = *k else { unreachable!() };
        let truth = &sim.world().truth[robot as usize].poses[t as usize];
        assert!(s.estimates[k].ominus(truth).unwrap().0.amax() < 1e-5);
    }
}

#[test]
fn lm_energy_never_increases() {
    let (_, g) = scenario_graph(NoiseConfig::default(), 8, 2);
    let s = solve_lm(&g, &LmOptions::default(), None).unwrap();
    let mut prev = s.report.initial_energy;
    for &e in &s.report.energy {
        assert!(e <= prev);
        prev = e;
    }
    assert!(prev < s.report.initial_energy);
    assert!(s.report.converged);
}

#[test]
fn metric_callback_runs_once_per_iteration() {
    let (_, g) = scenario_graph(NoiseConfig::default(), 3, 4);
    let calls = std::cell::Cell::new(0);
    let f = |_: &Estimates| {
        calls.set(calls.get() + 1);
        PoseMetrics::default()
    };
    let s = solve_block_gs(&g, &BlockOptions { max_sweeps: 4, omega: 1.0, tol: 0.0 }, Some(&f)).unwrap();
    assert_eq!(s.report.metrics.len(), 4);
    assert_eq!(calls.get(), 4);
    assert_eq!(s.report.energy.len(), 4);
}
