use super::{Execution, ScenarioConfig, Schedule, World, SIGMA_FLOOR};
use crate::eval::{rmse_are, rmse_ate, EvalError, MetricsRecord, PoseMetrics};
use crate::factors::FactorModel;
use crate::graph::{
    Delivery, FactorKey, FactorSpec, Graph, GraphError, KeyedDropout, NodeRef, RobotId, VarKey, mix,
};
use crate::manifold::ManifoldPoint;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Keyed dropout plus a range limit on messages between different robots.
#[derive(Debug, Clone)]
pub struct ChannelDelivery {
    pub dropout: KeyedDropout,
    /// True position of every robot at the current timestep.
    pub positions: Vec<Vector3<f64>>,
    pub comm_range: Option<f64>,
}

impl ChannelDelivery {
    fn in_range(&self, a: RobotId, b: RobotId) -> bool {
        match self.comm_range {
            Some(r) if a != b => {
                (self.positions[a as usize] - self.positions[b as usize]).norm() <= r
            }
            _ => true,
        }
    }
}

impl Delivery for ChannelDelivery {
    fn delivers(
        &self,
        iteration: u64,
        from: NodeRef,
        to: NodeRef,
        from_owner: RobotId,
        to_owner: RobotId,
    ) -> bool {
        self.in_range(from_owner, to_owner)
            && self.dropout.delivers(iteration, from, to, from_owner, to_owner)
    }
}

/// One inter-graph message as seen by the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTrace {
    pub iteration: u64,
    pub from: NodeRef,
    pub to: NodeRef,
    pub delivered: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExchangeReport {
    pub sent: u64,
    pub dropped: u64,
}

fn owner_of(node: &NodeRef) -> Option<RobotId> {
    match node {
        NodeRef::Var(v) => v.robot(),
        NodeRef::Factor(f) => f.robot(),
    }
}

/// Moves every outbox message to the graph of its receiver; `graphs[i]` belongs to robot `i`.
/// Messages the channel rejects are discarded.
pub fn exchange(
    graphs: &mut [Graph],
    delivery: &dyn Delivery,
    mut trace: Option<&mut Vec<MessageTrace>>,
) -> Result<ExchangeReport, GraphError> {
    let mut report = ExchangeReport::default();
    let msgs: Vec<_> = graphs.iter_mut().flat_map(|g| g.take_outbox()).collect();
    for msg in msgs {
        let misrouted = GraphError::Misrouted {
            from: msg.from,
            to: msg.to,
        };
        let (Some(fo), Some(to)) = (owner_of(&msg.from), owner_of(&msg.to)) else {
            return Err(misrouted);
        };
        report.sent += 1;
        let ok = delivery.delivers(msg.iteration, msg.from, msg.to, fo, to);
        if let Some(t) = trace.as_deref_mut() {
            t.push(MessageTrace {
                iteration: msg.iteration,
                from: msg.from,
                to: msg.to,
                delivered: ok,
            });
        }
        if !ok {
            report.dropped += 1;
            continue;
        }
        graphs.get_mut(to as usize).ok_or(misrouted)?.deliver(msg)?;
    }
    Ok(report)
}

/// Nodes added by one call to [`Simulation::build_step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDelta {
    pub variables: Vec<VarKey>,
    pub factors: Vec<FactorKey>,
    /// Factor-variable pairs whose endpoints belong to different robots.
    pub cross_edges: Vec<(FactorKey, VarKey)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: u64,
    pub energy: f64,
    pub msgs_sent: u64,
    pub msgs_dropped: u64,
}

/// Errors of the estimates returned by `estimate` against the world's ground truth,
/// over body poses `0..=t_max`.
pub fn scenario_metrics(
    world: &World,
    t_max: usize,
    estimate: &dyn Fn(&VarKey) -> Option<ManifoldPoint>,
) -> Result<PoseMetrics, EvalError> {
    let mut body = (BTreeMap::new(), BTreeMap::new());
    let mut sensor = (BTreeMap::new(), BTreeMap::new());
    let mut marker = (BTreeMap::new(), BTreeMap::new());
    let put = |maps: &mut (BTreeMap<VarKey, ManifoldPoint>, BTreeMap<VarKey, ManifoldPoint>),
                   key: VarKey,
                   truth: ManifoldPoint| {
        if let Some(e) = estimate(&key) {
            maps.0.insert(key, e);
        }
        maps.1.insert(key, truth);
    };
    for r in &world.truth {
        for t in 0..=t_max {
            put(&mut body, VarKey::Body { robot: r.id, t: t as u32 }, r.poses[t].clone());
        }
        put(&mut sensor, VarKey::ExtrinsicSensor { robot: r.id }, r.t_bs.clone());
        put(&mut marker, VarKey::ExtrinsicMarker { robot: r.id }, ManifoldPoint::Rn(r.t_bm.clone()));
    }
    Ok(PoseMetrics {
        ate_twb_m: rmse_ate(&body.0, &body.1)?,
        are_twb_deg: rmse_are(&body.0, &body.1)?,
        ate_tbs_m: rmse_ate(&sensor.0, &sensor.1)?,
        are_tbs_deg: rmse_are(&sensor.0, &sensor.1)?,
        ate_tbm_m: rmse_ate(&marker.0, &marker.1)?,
    })
}

pub(crate) fn diag_info(sigmas: &[f64]) -> DMatrix<f64> {
    let d: Vec<f64> = sigmas.iter().map(|s| 1.0 / s.max(SIGMA_FLOOR).powi(2)).collect();
    DMatrix::from_diagonal(&DVector::from_vec(d))
}

/// Robots, their graphs and the channel between them.
#[derive(Debug, Clone)]
pub struct Simulation {
    world: World,
    cfg: ScenarioConfig,
    graphs: Vec<Graph>,
    built: usize,
    iteration: u64,
    dropout: KeyedDropout,
    trace: Option<Vec<MessageTrace>>,
}

impl Simulation {
    pub fn new(world: World, cfg: ScenarioConfig) -> Self {
        let n_graphs = match cfg.execution {
            Execution::Centralized => 1,
            Execution::Distributed => world.n_robots(),
        };
        let dropout = KeyedDropout {
            seed: mix(&[cfg.seed, cfg.channel.seed, 0x6368_616e]),
            internal: cfg.solver.internal_drop,
            external: cfg.channel.drop_prob,
        };
        Simulation {
            world,
            cfg,
            graphs: vec![Graph::new(); n_graphs],
            built: 0,
            iteration: 0,
            dropout,
            trace: None,
        }
    }

    /// Start recording every message that crosses between graphs.
    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[MessageTrace] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn into_graphs(self) -> Vec<Graph> {
        self.graphs
    }

    /// Number of timesteps added so far.
    pub fn steps_built(&self) -> usize {
        self.built
    }

    fn graph_of(&self, robot: RobotId) -> usize {
        match self.cfg.execution {
            Execution::Centralized => 0,
            Execution::Distributed => robot as usize,
        }
    }

    pub fn estimate(&self, key: &VarKey) -> Option<&ManifoldPoint> {
        self.graphs[self.graph_of(key.robot()?)].estimate(key)
    }

    fn current(&self, key: &VarKey) -> Result<ManifoldPoint, GraphError> {
        self.estimate(key)
            .cloned()
            .ok_or(GraphError::UnknownVariable(*key))
    }

    fn add_variable(
        &mut self,
        delta: &mut StepDelta,
        key: VarKey,
        estimate: ManifoldPoint,
    ) -> Result<(), GraphError> {
        let robot = key.robot().expect("simulation variables belong to robots");
        let g = self.graph_of(robot);
        self.graphs[g].add_variable(key, robot, estimate)?;
        delta.variables.push(key);
        Ok(())
    }

    fn add_factor(
        &mut self,
        delta: &mut StepDelta,
        key: FactorKey,
        model: FactorModel,
        noise_lambda: DMatrix<f64>,
        adjacency: Vec<VarKey>,
    ) -> Result<(), GraphError> {
        let owner = key.robot().expect("simulation factors belong to robots");
        let reg = match model {
            FactorModel::Prior { .. } => None,
            _ => self.cfg.solver.regularizer(),
        };
        let g = self.graph_of(owner);
        for v in &adjacency {
            let vo = v.robot().expect("simulation variables belong to robots");
            if vo != owner {
                delta.cross_edges.push((key, *v));
                let vg = self.graph_of(vo);
                if vg != g {
                    self.graphs[vg].attach_remote_factor(v, key, owner)?;
                }
            }
        }
        self.graphs[g].add_factor(FactorSpec {
            key,
            owner,
            model,
            noise_lambda,
            adjacency,
            reg,
        })?;
        delta.factors.push(key);
        Ok(())
    }

    fn add_prior(
        &mut self,
        delta: &mut StepDelta,
        var: VarKey,
        sigmas: &[f64],
    ) -> Result<(), GraphError> {
        let mean = self.current(&var)?;
        self.add_factor(
            delta,
            FactorKey::Prior { var },
            FactorModel::Prior { mean },
            diag_info(sigmas),
            vec![var],
        )
    }

    /// Adds timestep `t` (the next unbuilt one) to the graphs.
    pub fn build_step(&mut self, t: usize) -> Result<StepDelta, GraphError> {
        assert_eq!(t, self.built, "timesteps are built in order");
        assert!(t <= self.world.n_steps, "timestep beyond the world");
        let deg = std::f64::consts::PI / 180.0;
        let noise = self.cfg.noise;
        let solver = self.cfg.solver;
        let mut delta = StepDelta::default();
        let n = self.world.n_robots() as RobotId;
        let ts = t as u32;

        for r in 0..n {
            let body = VarKey::Body { robot: r, t: ts };
            if t == 0 {
                let inputs = &self.world.inputs[r as usize];
                let (pose, t_bs, t_bm) = (
                    inputs.init_pose.clone(),
                    inputs.t_bs_init.clone(),
                    ManifoldPoint::Rn(inputs.t_bm_init.clone()),
                );
                self.add_variable(&mut delta, body, pose)?;
                let ti = noise.init_trans_sigma;
                let ri = noise.init_rot_sigma_deg * deg;
                self.add_prior(&mut delta, body, &[ti, ti, ti, ri, ri, ri])?;

                let s = solver.calib_prior_scale;
                let sensor = VarKey::ExtrinsicSensor { robot: r };
                self.add_variable(&mut delta, sensor, t_bs)?;
                let st = s * noise.calib_sensor_trans_sigma;
                let sr = s * noise.calib_sensor_rot_sigma_deg * deg;
                self.add_prior(&mut delta, sensor, &[st, st, st, sr, sr, sr])?;

                let marker = VarKey::ExtrinsicMarker { robot: r };
                self.add_variable(&mut delta, marker, t_bm)?;
                let mt = s * noise.calib_marker_trans_sigma;
                self.add_prior(&mut delta, marker, &[mt, mt, mt])?;

                if !solver.auto_calib {
                    let g = self.graph_of(r);
                    self.graphs[g].set_fixed(&sensor, true)?;
                    self.graphs[g].set_fixed(&marker, true)?;
                }
            } else {
                let prev = VarKey::Body { robot: r, t: ts - 1 };
                let odom = self.world.inputs[r as usize].odometry[t - 1].clone();
                let est = self.current(&prev)?.compose(&odom.relative)?;
                self.add_variable(&mut delta, body, est)?;
                self.add_factor(
                    &mut delta,
                    FactorKey::Odometry { robot: r, t: ts },
                    FactorModel::Odometry {
                        relative: odom.relative,
                    },
                    diag_info(&odom.sigma),
                    vec![prev, body],
                )?;
            }
        }

        let events = self.world.observations[t].clone();
        let mut observes = vec![false; n as usize];
        let mut observed = vec![false; n as usize];
        for e in &events {
            observes[e.observer as usize] = true;
            observed[e.observed as usize] = true;
        }
        let ct = solver.calib_factor_trans_sigma;
        let cr = solver.calib_factor_rot_sigma_deg * deg;
        for r in 0..n {
            let body = VarKey::Body { robot: r, t: ts };
            if observes[r as usize] {
                let key = VarKey::Sensor { robot: r, t: ts };
                let ext = VarKey::ExtrinsicSensor { robot: r };
                let est = self.current(&body)?.compose(&self.current(&ext)?)?;
                self.add_variable(&mut delta, key, est)?;
                self.add_factor(
                    &mut delta,
                    FactorKey::SensorCalib { robot: r, t: ts },
                    FactorModel::SensorCalibration,
                    diag_info(&[ct, ct, ct, cr, cr, cr]),
                    vec![key, body, ext],
                )?;
            }
            if observed[r as usize] {
                let key = VarKey::Marker { robot: r, t: ts };
                let ext = VarKey::ExtrinsicMarker { robot: r };
                let local = self
                    .current(&ext)?
                    .translation()
                    .expect("marker offset is a vector");
                let est = ManifoldPoint::Rn(self.current(&body)?.transform(&local)?);
                self.add_variable(&mut delta, key, est)?;
                self.add_factor(
                    &mut delta,
                    FactorKey::MarkerCalib { robot: r, t: ts },
                    FactorModel::MarkerCalibration,
                    diag_info(&[ct, ct, ct]),
                    vec![key, body, ext],
                )?;
            }
        }

        let rs = noise.rb_range_sigma;
        let bs = noise.rb_bearing_sigma_deg * deg;
        let dcs = solver.dcs_config();
        for e in &events {
            let sensor = VarKey::Sensor {
                robot: e.observer,
                t: ts,
            };
            let marker = VarKey::Marker {
                robot: e.observed,
                t: ts,
            };
            self.add_factor(
                &mut delta,
                FactorKey::RangeBearing {
                    observer: e.observer,
                    target: marker,
                    t: ts,
                },
                FactorModel::RangeBearing {
                    measured: e.measured,
                    dcs,
                },
                diag_info(&[rs, bs, bs]),
                vec![sensor, marker],
            )?;
        }
        self.built = t + 1;
        Ok(delta)
    }

    /// Current channel: dropout plus range limit at the latest built timestep.
    pub fn delivery(&self) -> ChannelDelivery {
        let t = self.built.saturating_sub(1);
        let positions = match self.cfg.channel.comm_range {
            Some(_) => (0..self.world.n_robots() as RobotId)
                .map(|r| self.world.true_position(r, t))
                .collect(),
            None => Vec::new(),
        };
        ChannelDelivery {
            dropout: self.dropout,
            positions,
            comm_range: self.cfg.channel.comm_range,
        }
    }

    /// One synchronous GBP round over all graphs, with an exchange after each phase.
    pub fn iterate(&mut self) -> Result<IterationOutcome, GraphError> {
        let it = self.iteration;
        self.iteration += 1;
        let delivery = self.delivery();
        let mut sent = 0;
        let mut dropped = 0;
        for g in &mut self.graphs {
            let s = g.factor_phase(it, &delivery);
            sent += s.sent;
            dropped += s.dropped;
        }
        let ex = exchange(&mut self.graphs, &delivery, self.trace.as_mut())?;
        sent += ex.sent;
        dropped += ex.dropped;
        for g in &mut self.graphs {
            let s = g.variable_phase(it, &delivery);
            sent += s.sent;
            dropped += s.dropped;
        }
        let ex = exchange(&mut self.graphs, &delivery, self.trace.as_mut())?;
        sent += ex.sent;
        dropped += ex.dropped;
        Ok(IterationOutcome {
            iteration: it,
            energy: self.energy(),
            msgs_sent: sent,
            msgs_dropped: dropped,
        })
    }

    /// Sum of raw factor energies at the current estimates.
    pub fn energy(&self) -> f64 {
        let lookup = |k: &VarKey| self.estimate(k).cloned();
        self.graphs.iter().map(|g| g.total_energy_with(&lookup)).sum()
    }

    pub fn metrics(&self) -> Result<PoseMetrics, EvalError> {
        scenario_metrics(
            &self.world,
            self.built.saturating_sub(1),
            &|k| self.estimate(k).cloned(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub records: Vec<MetricsRecord>,
    /// Metrics of the initial estimates of the full trajectory, before any iteration.
    pub initial: PoseMetrics,
    pub final_metrics: PoseMetrics,
}

/// The whole scenario as one graph at its initial estimates, for the reference solvers.
pub fn centralized_problem(cfg: &ScenarioConfig) -> Result<(World, Graph), GraphError> {
    let cfg = ScenarioConfig {
        execution: Execution::Centralized,
        ..*cfg
    };
    let mut sim = Simulation::new(cfg.generate_world(), cfg);
    for t in 0..=cfg.n_motions {
        sim.build_step(t)?;
    }
    let mut graphs = sim.graphs;
    Ok((sim.world, graphs.pop().expect("one graph")))
}

/// Generates the world, grows the graphs per the schedule and iterates, recording
/// metrics after every iteration.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, SimError> {
    run_world(cfg.generate_world(), cfg)
}

pub(crate) fn run_world(world: World, cfg: &ScenarioConfig) -> Result<ScenarioOutcome, SimError> {
    let n_steps = world.n_steps;
    let mut sim = Simulation::new(world, *cfg);
    let mut records = Vec::new();
    let mut record = |sim: &Simulation, motion: usize, iteration: usize, o: IterationOutcome| {
        sim.metrics().map(|m| {
            records.push(MetricsRecord {
                seed: cfg.seed,
                motion: motion as u32,
                iteration: iteration as u32,
                ate_twb_m: m.ate_twb_m,
                are_twb_deg: m.are_twb_deg,
                ate_tbs_m: m.ate_tbs_m,
                are_tbs_deg: m.are_tbs_deg,
                ate_tbm_m: m.ate_tbm_m,
                energy: o.energy,
                msgs_sent: o.msgs_sent,
                msgs_dropped: o.msgs_dropped,
            })
        })
    };
    let initial = dead_reckoning_metrics(&sim)?;
    match cfg.schedule {
        Schedule::Incremental => {
            for t in 0..=n_steps {
                sim.build_step(t)?;
                for i in 1..=cfg.iterations_per_motion {
                    let o = sim.iterate()?;
                    record(&sim, t, i, o)?;
                }
            }
        }
        Schedule::Batch => {
            for t in 0..=n_steps {
                sim.build_step(t)?;
            }
            for i in 1..=cfg.iterations_per_motion {
                let o = sim.iterate()?;
                record(&sim, n_steps, i, o)?;
            }
        }
    }
    let final_metrics = sim.metrics()?;
    Ok(ScenarioOutcome {
        records,
        initial,
        final_metrics,
    })
}

/// Metrics of the purely odometric trajectories from the noisy initial poses and
/// the initial calibration, independent of what the solver has done so far.
fn dead_reckoning_metrics(sim: &Simulation) -> Result<PoseMetrics, EvalError> {
    let world = sim.world();
    let mut poses: BTreeMap<VarKey, ManifoldPoint> = BTreeMap::new();
    for (r, inputs) in world.inputs.iter().enumerate() {
        let robot = r as RobotId;
        let mut p = inputs.init_pose.clone();
        poses.insert(VarKey::Body { robot, t: 0 }, p.clone());
        for (k, o) in inputs.odometry.iter().enumerate() {
            p = p.compose(&o.relative).expect("se3 compose");
            poses.insert(VarKey::Body { robot, t: k as u32 + 1 }, p.clone());
        }
        poses.insert(VarKey::ExtrinsicSensor { robot }, inputs.t_bs_init.clone());
        poses.insert(VarKey::ExtrinsicMarker { robot }, ManifoldPoint::Rn(inputs.t_bm_init.clone()));
    }
    scenario_metrics(world, world.n_steps, &|k| poses.get(k).cloned())
}
