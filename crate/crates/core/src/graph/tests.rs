use super::*;
use crate::factors::{DcsConfig, RangeBearing};
use crate::manifold::ManifoldKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn node(id: u32) -> VarKey {
    VarKey::Node { id }
}

fn linear(
    key: u32,
    adjacency: &[u32],
    coefficients: Vec<DMatrix<f64>>,
    offset: &[f64],
    info: DMatrix<f64>,
) -> FactorSpec {
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

fn prior_spec(key: u32, var: u32, mean: &[f64], info: DMatrix<f64>) -> FactorSpec {
    FactorSpec {
        key: FactorKey::Node { id: key },
        owner: 0,
        model: FactorModel::Prior {
            mean: ManifoldPoint::rn(mean),
        },
        noise_lambda: info,
        adjacency: vec![node(var)],
        reg: None,
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

/// Dense information-form oracle for a graph of linear factors over R^d variables.
struct DenseOracle {
    eta: DVector<f64>,
    lambda: DMatrix<f64>,
    d: usize,
}

impl DenseOracle {
    fn new(n: usize, d: usize) -> Self {
        DenseOracle {
            eta: DVector::zeros(n * d),
            lambda: DMatrix::zeros(n * d, n * d),
            d,
        }
    }

    /// Adds `‖b - Σ A_i x_i‖²_Λ`.
    fn add(&mut self, vars: &[usize], a: &[DMatrix<f64>], b: &[f64], info: &DMatrix<f64>) {
        let n = self.eta.len();
        let mut big_a = DMatrix::zeros(b.len(), n);
        for (v, ai) in vars.iter().zip(a) {
            big_a.view_mut((0, v * self.d), (b.len(), self.d)).copy_from(ai);
        }
        let b = DVector::from_column_slice(b);
        self.lambda += big_a.transpose() * info * &big_a;
        self.eta += big_a.transpose() * info * b;
    }

    fn marginals(&self) -> (DVector<f64>, DMatrix<f64>) {
        let cov = self.lambda.clone().try_inverse().unwrap();
        (&cov * &self.eta, cov)
    }
}

fn run(graph: &mut Graph, iters: u64, delivery: &dyn Delivery) {
    for k in 0..iters {
        graph.iterate(k, delivery);
    }
}

fn chain(rng: &mut ChaCha8Rng, n: u32, d: usize) -> (Graph, DenseOracle) {
    let mut g = Graph::new();
    let mut oracle = DenseOracle::new(n as usize, d);
    for i in 0..n {
        let init: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        g.add_variable(node(i), 0, ManifoldPoint::rn(&init)).unwrap();
    }
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let info = random_spd(rng, d);
    g.add_factor(prior_spec(100, 0, &mean, info.clone())).unwrap();
    oracle.add(&[0], &[DMatrix::identity(d, d)], &mean, &info);
    for i in 0..n - 1 {
        let a0 = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let a1 = DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.3..0.3));
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let info = random_spd(rng, d);
        g.add_factor(linear(i, &[i, i + 1], vec![a0.clone(), a1.clone()], &b, info.clone()))
            .unwrap();
        oracle.add(&[i as usize, i as usize + 1], &[a0, a1], &b, &info);
    }
    (g, oracle)
}

#[test]
fn belief_without_messages_is_the_prior() {
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[0.0, 0.0])).unwrap();
    let prior = CanonicalGaussian::new(
        DVector::from_column_slice(&[1.0, -2.0]),
        DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
    )
    .unwrap();
    g.set_prior(&node(0), prior.clone()).unwrap();
    assert_eq!(g.compute_belief(&node(0)).unwrap(), prior);
}

#[test]
fn equal_weight_fusion() {
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[0.0, 0.0])).unwrap();
    g.add_variable(node(1), 0, ManifoldPoint::rn(&[0.0, 0.0])).unwrap();
    g.add_variable(node(2), 0, ManifoldPoint::rn(&[0.0, 0.0])).unwrap();
    g.add_factor(linear(0, &[0, 1], vec![DMatrix::identity(2, 2), DMatrix::zeros(2, 2)], &[0.0, 0.0], DMatrix::identity(2, 2)))
        .unwrap();
    g.add_factor(linear(1, &[0, 2], vec![DMatrix::identity(2, 2), DMatrix::zeros(2, 2)], &[0.0, 0.0], DMatrix::identity(2, 2)))
        .unwrap();
    let v = g.variable_mut(&node(0)).unwrap();
    v.inbox[0].message = CanonicalGaussian::new(DVector::from_column_slice(&[1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
    v.inbox[1].message = CanonicalGaussian::new(DVector::from_column_slice(&[3.0, -2.0]), DMatrix::identity(2, 2)).unwrap();
    let b = g.compute_belief(&node(0)).unwrap();
    assert_eq!(b.lambda, DMatrix::identity(2, 2) * 2.0);
    assert!((b.mean().unwrap() - DVector::from_column_slice(&[2.0, 0.0])).amax() < 1e-15);
}

#[test]
fn belief_is_independent_of_inbox_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v = VariableNode {
        key: node(0),
        owner: 0,
        estimate: ManifoldPoint::rn(&[0.0; 3]),
        belief: CanonicalGaussian::zeros(3),
        prior: None,
        inbox: (0..6)
            .map(|i| InboxEntry {
                factor: FactorKey::Node { id: i },
                factor_owner: 0,
                local: None,
                message: CanonicalGaussian::new(
                    DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0)),
                    random_spd(&mut rng, 3),
                )
                .unwrap(),
            })
            .collect(),
        fixed: false,
        frozen: false,
        dirty: true,
    };
    let b = v.compute_belief();
    assert_eq!(v.compute_belief(), b);
    v.inbox.reverse();
    v.inbox.swap(1, 4);
    assert!(v.compute_belief().max_abs_diff(&b) < 1e-12);
}

#[test]
fn variable_to_factor_is_belief_over_inbox() {
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[0.5])).unwrap();
    g.add_variable(node(1), 0, ManifoldPoint::rn(&[0.5])).unwrap();
    let prior = CanonicalGaussian::new(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
    g.set_prior(&node(0), prior.clone()).unwrap();
    g.add_factor(linear(0, &[0, 1], vec![DMatrix::identity(1, 1), -DMatrix::identity(1, 1)], &[1.0], DMatrix::identity(1, 1)))
        .unwrap();
    // single neighbour: the message is the prior alone
    let msg = g.variable_to_factor(&node(0), &FactorKey::Node { id: 0 }).unwrap();
    assert_eq!(msg.gaussian, prior);
    assert_eq!(msg.lin_point, ManifoldPoint::rn(&[0.5]));

    g.add_factor(prior_spec(1, 0, &[3.0], DMatrix::from_element(1, 1, 2.0))).unwrap();
    run(&mut g, 3, &KeyedDropout::none());
    let belief = g.compute_belief(&node(0)).unwrap();
    let v = g.variable(&node(0)).unwrap();
    for (pos, e) in v.inbox.iter().enumerate() {
        let m = g.variable_to_factor(&node(0), &e.factor).unwrap();
        assert!(m.gaussian.product(&v.inbox[pos].message).unwrap().max_abs_diff(&belief) < 1e-12);
        // oracle: re-multiply prior and all other messages
        let mut other = v.prior.clone().unwrap();
        for (q, o) in v.inbox.iter().enumerate() {
            if q != pos {
                other.product_assign(&o.message);
            }
        }
        assert!(m.gaussian.max_abs_diff(&other) < 1e-12);
    }
}

#[test]
fn prior_factor_linearization_and_message() {
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[1.0, 1.0])).unwrap();
    let info = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    g.add_factor(prior_spec(0, 0, &[2.0, -1.0], info.clone())).unwrap();
    let x = ManifoldPoint::rn(&[1.0, 1.0]);
    let lin = g.linearize_factor(&FactorKey::Node { id: 0 }, &[&x]).unwrap();
    let r = DVector::from_column_slice(&[1.0, -2.0]);
    assert!((&lin.potential.eta - &info * &r).amax() < 1e-15);
    assert_eq!(lin.potential.lambda, info);
    // before any variable message arrives the factor is dormant
    assert!(g.factor_to_variable(&FactorKey::Node { id: 0 }, &node(0)).unwrap().is_none());
    g.iterate(0, &KeyedDropout::none());
    let msg = g.factor_to_variable(&FactorKey::Node { id: 0 }, &node(0)).unwrap().unwrap();
    let x = g.estimate(&node(0)).unwrap().clone();
    let lin = g.linearize_factor(&FactorKey::Node { id: 0 }, &[&x]).unwrap();
    assert_eq!(msg.gaussian, lin.potential);
}

#[test]
fn anchored_pair_reproduces_conditional_mean() {
    // x0 pinned by a strong prior at 2; factor says x1 - x0 = 3 with Λ = 1
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[0.0])).unwrap();
    g.add_variable(node(1), 0, ManifoldPoint::rn(&[0.0])).unwrap();
    g.add_factor(prior_spec(0, 0, &[2.0], DMatrix::from_element(1, 1, 1e8))).unwrap();
    g.add_factor(linear(1, &[0, 1], vec![-DMatrix::identity(1, 1), DMatrix::identity(1, 1)], &[3.0], DMatrix::identity(1, 1)))
        .unwrap();
    run(&mut g, 4, &KeyedDropout::none());
    let msg = g.factor_to_variable(&FactorKey::Node { id: 1 }, &node(1)).unwrap().unwrap();
    let frame = msg.lin_point.ominus(&ManifoldPoint::rn(&[0.0])).unwrap();
    let mean = msg.gaussian.mean().unwrap()[0] + frame[0];
    let mut oracle = DenseOracle::new(2, 1);
    oracle.add(&[0], &[DMatrix::identity(1, 1)], &[2.0], &DMatrix::from_element(1, 1, 1e8));
    oracle.add(&[0, 1], &[-DMatrix::identity(1, 1), DMatrix::identity(1, 1)], &[3.0], &DMatrix::identity(1, 1));
    let (mu, _) = oracle.marginals();
    assert!((mean - mu[1]).abs() < 1e-8, "{mean} vs {}", mu[1]);
    assert!((g.estimate(&node(1)).unwrap().ominus(&ManifoldPoint::rn(&[mu[1]])).unwrap()[0]).abs() < 1e-8);
}

#[test]
fn uninformed_range_bearing_factor_is_skipped() {
    let mut g = Graph::new();
    let sensor = VarKey::Sensor { robot: 0, t: 0 };
    let marker = VarKey::Marker { robot: 1, t: 0 };
    g.add_variable(sensor, 0, ManifoldPoint::identity(&ManifoldKind::Se3)).unwrap();
    g.add_variable(marker, 1, ManifoldPoint::rn(&[3.0, 0.5, 0.2])).unwrap();
    let key = FactorKey::RangeBearing {
        observer: 0,
        target: marker,
        t: 0,
    };
    g.add_factor(FactorSpec {
        key,
        owner: 0,
        model: FactorModel::RangeBearing {
            measured: RangeBearing::spherical(3.0, 0.1, 0.05),
            dcs: Some(DcsConfig::default()),
        },
        noise_lambda: DMatrix::identity(3, 3) * 100.0,
        adjacency: vec![sensor, marker],
        reg: None,
    })
    .unwrap();
    // variables send zero-information messages
    g.variable_phase(0, &KeyedDropout::none());
    // eliminating the sensor block (rank 3 of 6) is singular
    assert!(g.factor_to_variable(&key, &marker).unwrap().is_none());
    let to_sensor = g.factor_to_variable(&key, &sensor).unwrap().unwrap();
    assert!(to_sensor.gaussian.lambda.amax() < 1e-9);
    let stats = g.factor_phase(1, &KeyedDropout::none());
    assert_eq!(stats.sent, 1);
    assert_eq!(g.variable(&marker).unwrap().inbox[0].message, CanonicalGaussian::zeros(3));
}

#[test]
fn chain_beliefs_match_dense_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for d in [1, 2, 3] {
        let (mut g, oracle) = chain(&mut rng, 5, d);
        run(&mut g, 12, &KeyedDropout::none());
        let (mu, cov) = oracle.marginals();
        for i in 0..5u32 {
            let v = g.variable(&node(i)).unwrap();
            let est = match &v.estimate {
                ManifoldPoint::Rn(x) => x.clone(),
                _ => unreachable!(),
            };
            let (db, bcov) = g.compute_belief(&node(i)).unwrap().to_moments().unwrap();
            let o = i as usize * d;
            assert!((est + db - mu.rows(o, d)).amax() < 1e-8);
            assert!((bcov - cov.view((o, o), (d, d))).amax() < 1e-8);
        }
    }
}

#[test]
fn tree_beliefs_match_dense_marginals() {
    // star-shaped tree with a branch: 0 - 1 - 2, 1 - 3 - 4
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 2;
    let mut g = Graph::new();
    let mut oracle = DenseOracle::new(5, d);
    for i in 0..5 {
        g.add_variable(node(i), 0, ManifoldPoint::rn(&[0.0, 0.0])).unwrap();
    }
    for (k, (a, b)) in [(0u32, 1u32), (1, 2), (1, 3), (3, 4)].into_iter().enumerate() {
        let a0 = random_spd(&mut rng, d);
        let a1 = -random_spd(&mut rng, d);
        let off: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let info = random_spd(&mut rng, d);
        g.add_factor(linear(k as u32, &[a, b], vec![a0.clone(), a1.clone()], &off, info.clone()))
            .unwrap();
        oracle.add(&[a as usize, b as usize], &[a0, a1], &off, &info);
    }
    for (k, v) in [(10u32, 2u32), (11, 4)] {
        let m: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let info = random_spd(&mut rng, d);
        g.add_factor(prior_spec(k, v, &m, info.clone())).unwrap();
        oracle.add(&[v as usize], &[DMatrix::identity(d, d)], &m, &info);
    }
    run(&mut g, 15, &KeyedDropout::none());
    let (mu, cov) = oracle.marginals();
    for i in 0..5u32 {
        let v = g.variable(&node(i)).unwrap();
        let o = i as usize * d;
        let est = v.estimate.ominus(&ManifoldPoint::rn(&[0.0, 0.0])).unwrap();
        let (db, bcov) = v.compute_belief().to_moments().unwrap();
        assert!((est.into_inner() + db - mu.rows(o, d)).amax() < 1e-8);
        assert!((bcov - cov.view((o, o), (d, d))).amax() < 1e-8);
    }
}

#[test]
fn full_dropout_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut g, _) = chain(&mut rng, 5, 2);
    run(&mut g, 3, &KeyedDropout::none());
    let before = g.snapshot();
    for k in 3..8 {
        let rep = g.iterate(k, &KeyedDropout::uniform(9, 1.0));
        assert_eq!(rep.stats.sent, rep.stats.dropped);
    }
    let after = g.snapshot();
    for (a, b) in before.variables.iter().zip(&after.variables) {
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.inbox, b.inbox);
    }
    for (a, b) in before.factors.iter().zip(&after.factors) {
        assert_eq!(a.inbox, b.inbox);
    }
}

#[test]
fn same_seed_same_trace() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        chain(&mut rng, 5, 3).0
    };
    let (mut a, mut b) = (build(), build());
    let drop = KeyedDropout::uniform(77, 0.3);
    for k in 0..20 {
        assert_eq!(a.iterate(k, &drop), b.iterate(k, &drop));
        assert_eq!(a.snapshot().to_json(), b.snapshot().to_json());
    }
    let mut c = build();
    let other = KeyedDropout::uniform(78, 0.3);
    for k in 0..20 {
        c.iterate(k, &other);
    }
    assert_ne!(c.snapshot().to_json(), a.snapshot().to_json());
}

#[test]
fn dropout_rate_matches_probability() {
    let d = KeyedDropout::uniform(5, 0.3);
    let n = 20_000u64;
    let dropped = (0..n)
        .filter(|&k| d.dropped(k, NodeRef::Var(node(1)), NodeRef::Factor(FactorKey::Node { id: 2 }), false))
        .count() as f64;
    let p = dropped / n as f64;
    let sd = (0.3f64 * 0.7 / n as f64).sqrt();
    assert!((p - 0.3).abs() < 4.0 * sd, "{p}");
}

#[test]
fn total_energy_of_prior() {
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[1.0, 2.0, 2.0])).unwrap();
    assert_eq!(g.total_energy(), 0.0);
    g.add_factor(prior_spec(0, 0, &[0.0, 0.0, 0.0], DMatrix::identity(3, 3))).unwrap();
    assert_eq!(g.total_energy(), 9.0);
    g.add_factor(prior_spec(1, 0, &[1.0, 2.0, 2.0], DMatrix::identity(3, 3))).unwrap();
    assert_eq!(g.total_energy(), 9.0);
}

#[test]
fn fixed_variables_are_conditioned_on() {
    // x1 fixed at 4: factor x1 - x0 = 1 pulls x0 to 3 exactly
    let mut g = Graph::new();
    g.add_variable(node(0), 0, ManifoldPoint::rn(&[0.0])).unwrap();
    g.add_variable(node(1), 0, ManifoldPoint::rn(&[4.0])).unwrap();
    g.set_fixed(&node(1), true).unwrap();
    g.add_factor(linear(0, &[0, 1], vec![-DMatrix::identity(1, 1), DMatrix::identity(1, 1)], &[1.0], DMatrix::identity(1, 1)))
        .unwrap();
    run(&mut g, 3, &KeyedDropout::none());
    assert!((g.estimate(&node(0)).unwrap().ominus(&ManifoldPoint::rn(&[3.0])).unwrap()[0]).abs() < 1e-12);
    assert_eq!(g.estimate(&node(1)).unwrap(), &ManifoldPoint::rn(&[4.0]));
}

#[test]
fn frozen_variables_stay_put() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut g, _) = chain(&mut rng, 5, 2);
    run(&mut g, 2, &KeyedDropout::none());
    g.set_frozen(&node(0), true).unwrap();
    let frozen = g.variable(&node(0)).unwrap().clone();
    run(&mut g, 10, &KeyedDropout::none());
    let now = g.variable(&node(0)).unwrap();
    assert_eq!(now.estimate, frozen.estimate);
    assert_eq!(now.inbox, frozen.inbox);
}

#[test]
fn snapshot_json_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut g, _) = chain(&mut rng, 3, 1);
    run(&mut g, 2, &KeyedDropout::none());
    let json: serde_json::Value = serde_json::from_str(&g.snapshot().to_json()).unwrap();
    assert_eq!(json["variables"].as_array().unwrap().len(), 3);
    assert_eq!(json["factors"][0]["kind"], "prior");
    assert_eq!(json["factors"][1]["kind"], "linear");
    assert!(json["factors"][1]["inbox"][0]["lin_point"]["values"].is_array());
    assert!(json["variables"][0]["belief"]["lambda"][0].is_array());
    let back: GraphSnapshot = serde_json::from_value(json).unwrap();
    assert_eq!(back, g.snapshot());
}
