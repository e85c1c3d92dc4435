use super::*;
use crate::factors::predict_range_bearing;
use crate::graph::{Delivery, FactorKey, KeyedDropout, NodeRef, VarKey};
use crate::manifold::ManifoldPoint;
use nalgebra::{DVector, UnitQuaternion, Vector3};

fn small(n_robots: usize, n_motions: usize, iterations: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_robots,
        n_motions,
        iterations_per_motion: iterations,
        seed,
        ..Default::default()
    }
}

#[test]
fn marker_behind_the_sensor_is_not_observed() {
    let sensor = ManifoldPoint::se3(Vector3::zeros(), UnitQuaternion::identity());
    let fov = 60f64.to_radians();
    let ahead = DVector::from_column_slice(&[5.0, 0.5, 0.2]);
    let behind = DVector::from_column_slice(&[-5.0, 0.0, 0.0]);
    let above = DVector::from_column_slice(&[1.0, 0.0, 5.0]);
    assert!(observe(&sensor, &ahead, fov).is_some());
    assert!(observe(&sensor, &behind, fov).is_none());
    assert!(observe(&sensor, &above, fov).is_none());
}

#[test]
fn observations_respect_fov_and_observer_limit() {
    let cfg = small(12, 5, 1, 3);
    let world = cfg.generate_world();
    let fov = cfg.world.fov_deg.to_radians();
    let mut total = 0;
    for (t, events) in world.observations.iter().enumerate() {
        for r in 0..12 {
            assert!(events.iter().filter(|e| e.observer == r).count() <= 3);
        }
        for e in events {
            assert_ne!(e.observer, e.observed);
            let p = predict_range_bearing(
                &world.true_sensor(e.observer, t),
                &world.true_marker(e.observed, t),
            )
            .unwrap();
            assert!(p.azimuth.abs() < fov && p.elevation.unwrap().abs() < fov);
            total += 1;
        }
    }
    assert!(total > 0);
}

#[test]
fn the_closest_visible_robots_are_chosen() {
    let cfg = small(16, 3, 1, 5);
    let world = cfg.generate_world();
    let fov = cfg.world.fov_deg.to_radians();
    for (t, events) in world.observations.iter().enumerate() {
        for a in 0..16 {
            let sensor = world.true_sensor(a, t);
            let mut visible: Vec<(f64, u32)> = (0..16)
                .filter(|&b| b != a)
                .filter_map(|b| observe(&sensor, &world.true_marker(b, t), fov).map(|p| (p.range, b)))
                .collect();
            visible.sort_by(|x, y| x.0.total_cmp(&y.0));
            let expected: Vec<u32> = visible.iter().take(3).map(|v| v.1).collect();
            let got: Vec<u32> = events.iter().filter(|e| e.observer == a).map(|e| e.observed).collect();
            assert_eq!(got, expected);
        }
    }
}

#[test]
fn clean_measurements_lie_within_six_sigma() {
    let cfg = small(16, 10, 1, 11);
    let world = cfg.generate_world();
    let sr = cfg.noise.rb_range_sigma;
    let sb = cfg.noise.rb_bearing_sigma_deg.to_radians();
    let mut n = 0;
    for (t, events) in world.observations.iter().enumerate() {
        for e in events {
            assert!(!e.is_outlier);
            let p = predict_range_bearing(
                &world.true_sensor(e.observer, t),
                &world.true_marker(e.observed, t),
            )
            .unwrap();
            let d = e.measured.boxminus(&p);
            assert!(d[0].abs() < 6.0 * sr, "range off by {}", d[0]);
            assert!(d[1].abs() < 6.0 * sb && d[2].abs() < 6.0 * sb);
            n += 1;
        }
    }
    assert!(n > 100);
}

#[test]
fn outlier_fraction_is_respected() {
    let mut cfg = small(16, 20, 1, 2);
    cfg.noise.outlier_frac = 0.4;
    let world = cfg.generate_world();
    let all: Vec<_> = world.observations.iter().flatten().collect();
    let frac = all.iter().filter(|e| e.is_outlier).count() as f64 / all.len() as f64;
    let sd = (0.4 * 0.6 / all.len() as f64).sqrt();
    assert!((frac - 0.4).abs() < 4.0 * sd, "outlier fraction {frac}");
    for e in all.iter().filter(|e| e.is_outlier) {
        assert!((0.0..=30.0).contains(&e.measured.range));
    }
}

#[test]
fn outliers_leave_trajectories_and_clean_noise_unchanged() {
    let clean = small(8, 5, 1, 9).generate_world();
    let mut cfg = small(8, 5, 1, 9);
    cfg.noise.outlier_frac = 0.5;
    let noisy = cfg.generate_world();
    assert_eq!(clean.truth, noisy.truth);
    assert_eq!(clean.inputs, noisy.inputs);
    for (a, b) in clean.observations.iter().flatten().zip(noisy.observations.iter().flatten()) {
        if !b.is_outlier {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn same_seed_same_world() {
    let a = small(6, 4, 1, 21).generate_world();
    let b = small(6, 4, 1, 21).generate_world();
    let c = small(6, 4, 1, 22).generate_world();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn scripted_world() -> World {
    let mut world = generate_world(2, 2, &NoiseConfig::zero(), &WorldConfig::default(), 1);
    let event = |t: usize, a: u32, b: u32| ObservationEvent {
        t: t as u32,
        observer: a,
        observed: b,
        measured: predict_range_bearing(&world.true_sensor(a, t), &world.true_marker(b, t)).unwrap(),
        is_outlier: false,
    };
    let script = vec![vec![], vec![event(1, 0, 1)], vec![event(2, 0, 1), event(2, 1, 0)]];
    world.observations = script;
    world
}

#[test]
fn hand_counted_two_robot_schedule() {
    for execution in [Execution::Centralized, Execution::Distributed] {
        let cfg = ScenarioConfig {
            execution,
            ..small(2, 2, 1, 1)
        };
        let mut sim = Simulation::new(scripted_world(), cfg);
        // t=0: body, T_BS, t_BM and a prior on each, per robot
        let d0 = sim.build_step(0).unwrap();
        assert_eq!((d0.variables.len(), d0.factors.len(), d0.cross_edges.len()), (6, 6, 0));
        // t=1: two bodies + odometry; observer sensor, observed marker, two calibration factors, one range-bearing
        let d1 = sim.build_step(1).unwrap();
        assert_eq!((d1.variables.len(), d1.factors.len(), d1.cross_edges.len()), (4, 5, 1));
        let rb = FactorKey::RangeBearing {
            observer: 0,
            target: VarKey::Marker { robot: 1, t: 1 },
            t: 1,
        };
        assert_eq!(d1.cross_edges, vec![(rb, VarKey::Marker { robot: 1, t: 1 })]);
        // t=2: both observe and are observed
        let d2 = sim.build_step(2).unwrap();
        assert_eq!((d2.variables.len(), d2.factors.len(), d2.cross_edges.len()), (6, 8, 2));

        let total_vars: usize = sim.graphs().iter().map(|g| g.variables().len()).sum();
        let total_factors: usize = sim.graphs().iter().map(|g| g.factors().len()).sum();
        assert_eq!((total_vars, total_factors), (16, 19));
    }
}

#[test]
fn step_without_observations_adds_only_odometry() {
    let cfg = ScenarioConfig {
        execution: Execution::Distributed,
        ..small(2, 2, 1, 1)
    };
    let mut world = scripted_world();
    world.observations[1].clear();
    let mut sim = Simulation::new(world, cfg);
    sim.build_step(0).unwrap();
    let d = sim.build_step(1).unwrap();
    assert!(d.variables.iter().all(|v| matches!(v, VarKey::Body { .. })));
    assert!(d.factors.iter().all(|f| matches!(f, FactorKey::Odometry { .. })));
    assert_eq!(d.variables.len(), 2);
}

#[test]
fn every_node_has_exactly_one_owner() {
    let cfg = small(5, 3, 1, 4);
    let mut sim = Simulation::new(cfg.generate_world(), cfg);
    for t in 0..=3 {
        sim.build_step(t).unwrap();
    }
    let mut seen = std::collections::HashSet::new();
    for (r, g) in sim.graphs().iter().enumerate() {
        for v in g.variables() {
            assert_eq!(v.owner as usize, r);
            assert!(seen.insert(NodeRef::Var(v.key)));
        }
        for f in g.factors() {
            assert_eq!(f.owner as usize, r);
            assert!(seen.insert(NodeRef::Factor(f.key)));
            for s in &f.slots {
                if s.var_owner != f.owner {
                    assert!(matches!(f.key, FactorKey::RangeBearing { .. }));
                    assert!(matches!(s.var, VarKey::Marker { .. }));
                }
            }
        }
    }
}

#[test]
fn full_drop_leaves_cross_robot_state_untouched() {
    let mut cfg = small(4, 2, 5, 6);
    cfg.channel.drop_prob = 1.0;
    let mut sim = Simulation::new(cfg.generate_world(), cfg);
    sim.record_trace();
    for t in 0..=2 {
        sim.build_step(t).unwrap();
        for _ in 0..5 {
            sim.iterate().unwrap();
        }
    }
    assert!(!sim.trace().is_empty());
    assert!(sim.trace().iter().all(|m| !m.delivered));
    for g in sim.graphs() {
        for v in g.variables() {
            for e in v.inbox.iter().filter(|e| e.local.is_none()) {
                assert_eq!(e.message.lambda.amax(), 0.0);
                assert_eq!(e.message.eta.amax(), 0.0);
            }
        }
        for f in g.factors() {
            for s in f.slots.iter().filter(|s| s.local.is_none()) {
                assert!(s.message.is_none());
            }
        }
    }
}

#[test]
fn zero_comm_range_equals_no_communication() {
    let base = small(4, 3, 5, 8);
    let mut ranged = base;
    ranged.channel.comm_range = Some(0.0);
    let mut cut = base;
    cut.channel.drop_prob = 1.0;
    let a = run_scenario(&ranged).unwrap();
    let b = run_scenario(&cut).unwrap();
    assert_eq!(a.final_metrics, b.final_metrics);
}

#[test]
fn delivery_counts_follow_the_binomial() {
    let d = ChannelDelivery {
        dropout: KeyedDropout {
            seed: 77,
            internal: 0.0,
            external: 0.3,
        },
        positions: Vec::new(),
        comm_range: None,
    };
    let from = NodeRef::Factor(FactorKey::Odometry { robot: 0, t: 1 });
    let to = NodeRef::Var(VarKey::Marker { robot: 1, t: 1 });
    let n = 10_000u64;
    let delivered = (0..n).filter(|&i| d.delivers(i, from, to, 0, 1)).count() as f64;
    let mean = n as f64 * 0.7;
    let sd = (n as f64 * 0.7 * 0.3).sqrt();
    assert!((delivered - mean).abs() < 3.0 * sd, "{delivered} delivered");
}

#[test]
fn comm_range_blocks_only_distant_pairs() {
    let d = ChannelDelivery {
        dropout: KeyedDropout::none(),
        positions: vec![Vector3::zeros(), Vector3::new(3.0, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)],
        comm_range: Some(5.0),
    };
    let a = NodeRef::Var(VarKey::Marker { robot: 0, t: 0 });
    assert!(d.delivers(0, a, a, 0, 1));
    assert!(!d.delivers(0, a, a, 0, 2));
    assert!(d.delivers(0, a, a, 2, 2));
}

#[test]
fn exact_data_is_a_fixed_point() {
    let mut cfg = small(4, 3, 10, 12);
    cfg.noise = NoiseConfig::zero();
    let out = run_scenario(&cfg).unwrap();
    let m = out.final_metrics;
    assert!(m.ate_twb_m < 1e-6, "{m:?}");
    assert!(m.ate_tbs_m < 1e-6 && m.ate_tbm_m < 1e-6);
}

fn assert_same_state(central: &Simulation, dist: &Simulation, tol: f64) {
    let g = &central.graphs()[0];
    for v in g.variables() {
        let robot = v.key.robot().unwrap() as usize;
        let d = dist.graphs()[robot].variable(&v.key).unwrap();
        assert!(v.estimate.max_abs_diff(&d.estimate) <= tol, "{} estimate", v.key);
        assert!(v.belief.max_abs_diff(&d.belief) <= tol, "{} belief", v.key);
    }
}

#[test]
fn distributed_matches_centralised_every_iteration() {
    let mut cfg = small(4, 3, 4, 31);
    cfg.channel = ChannelModel::perfect();
    let world = cfg.generate_world();
    let mut central = Simulation::new(
        world.clone(),
        ScenarioConfig {
            execution: Execution::Centralized,
            ..cfg
        },
    );
    let mut dist = Simulation::new(world, cfg);
    for t in 0..=3 {
        central.build_step(t).unwrap();
        dist.build_step(t).unwrap();
        for _ in 0..4 {
            let a = central.iterate().unwrap();
            let b = dist.iterate().unwrap();
            assert_eq!(a.msgs_sent, b.msgs_sent);
            assert_eq!(a.msgs_dropped, b.msgs_dropped);
            assert_same_state(&central, &dist, 1e-10);
        }
    }
}

#[test]
fn cross_robot_messages_never_expose_extrinsics() {
    let cfg = small(5, 3, 3, 13);
    let mut sim = Simulation::new(cfg.generate_world(), cfg);
    sim.record_trace();
    for t in 0..=3 {
        sim.build_step(t).unwrap();
        for _ in 0..3 {
            sim.iterate().unwrap();
        }
    }
    assert!(!sim.trace().is_empty());
    for m in sim.trace() {
        for node in [m.from, m.to] {
            match node {
                NodeRef::Var(v) => assert!(matches!(v, VarKey::Marker { .. }), "{v}"),
                NodeRef::Factor(f) => assert!(matches!(f, FactorKey::RangeBearing { .. }), "{f}"),
            }
        }
    }
}

#[test]
fn scenario_is_deterministic() {
    let cfg = small(4, 3, 3, 17);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fixed_extrinsics_stay_at_their_initial_values() {
    let mut cfg = small(4, 3, 5, 19);
    cfg.solver.auto_calib = false;
    let world = cfg.generate_world();
    let mut sim = Simulation::new(world.clone(), cfg);
    for t in 0..=3 {
        sim.build_step(t).unwrap();
        for _ in 0..5 {
            sim.iterate().unwrap();
        }
    }
    for r in 0..4u32 {
        assert_eq!(
            sim.estimate(&VarKey::ExtrinsicSensor { robot: r }).unwrap(),
            &world.inputs[r as usize].t_bs_init
        );
    }
}

#[test]
fn incremental_records_one_row_per_iteration() {
    let cfg = small(3, 2, 4, 1);
    let out = run_scenario(&cfg).unwrap();
    assert_eq!(out.records.len(), 3 * 4);
    assert_eq!(out.records.last().unwrap().motion, 2);
    let batch = ScenarioConfig {
        schedule: Schedule::Batch,
        ..cfg
    };
    assert_eq!(run_scenario(&batch).unwrap().records.len(), 4);
}
