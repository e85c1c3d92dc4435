//! UTIAS MR.CLAM ingestion and the planar sliding-window estimator run on it.
//!
//! A dataset directory holds `Barcodes.dat`, `Landmark_Groundtruth.dat` and, per
//! robot `i`, `Robot{i}_Odometry.dat` (time, v, ω), `Robot{i}_Measurement.dat`
//! (time, barcode, range, bearing) and `Robot{i}_Groundtruth.dat` (time, x, y, θ).
//! Lines starting with `#` are comments.

use super::{rmse_are, rmse_ate, EvalError, MetricsRecord};
use crate::distsim::diag_info;
use crate::factors::{AdaptiveReg, DcsConfig, FactorModel, RangeBearing};
use crate::graph::{FactorKey, FactorSpec, Graph, KeyedDropout, RobotId, VarKey};
use crate::manifold::{wrap_angle, ManifoldPoint};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    pub time: f64,
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMeasurement {
    pub time: f64,
    pub barcode: u32,
    pub range: f64,
    pub bearing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// A measurement assigned to a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeObservation {
    pub keyframe: usize,
    /// Subject number of the observed robot or landmark.
    pub subject: u32,
    pub range: f64,
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrClamRobot {
    pub subject: u32,
    pub odometry: Vec<OdometrySample>,
    pub measurements: Vec<RawMeasurement>,
    pub groundtruth: Vec<GroundTruthSample>,
    /// Ground-truth SE(2) pose at every keyframe.
    pub keyframes: Vec<ManifoldPoint>,
    /// `relative[k - 1]`: odometry integrated from keyframe `k - 1` to `k`.
    pub relative: Vec<ManifoldPoint>,
    pub observations: Vec<KeyframeObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrClamDataset {
    pub subsample_dt: f64,
    pub keyframe_times: Vec<f64>,
    /// Robot `i` in this vector is subject `i + 1`.
    pub robots: Vec<MrClamRobot>,
    /// Ground-truth landmark positions by subject number.
    pub landmarks: BTreeMap<u32, [f64; 2]>,
    /// Barcode to subject number.
    pub barcodes: BTreeMap<u32, u32>,
    /// Measurements discarded for an unknown barcode or lying outside every keyframe window.
    pub unassigned: usize,
}

impl MrClamDataset {
    pub fn n_keyframes(&self) -> usize {
        self.keyframe_times.len()
    }

    pub fn n_observations(&self) -> usize {
        self.robots.iter().map(|r| r.observations.len()).sum()
    }

    fn robot_index(&self, subject: u32) -> Option<usize> {
        let i = (subject as usize).checked_sub(1)?;
        (i < self.robots.len()).then_some(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub subsample_dt: f64,
    /// A measurement is kept only if it lies this close in time to a keyframe (s).
    pub obs_tolerance: f64,
}

impl LoadOptions {
    pub fn new(subsample_dt: f64) -> Self {
        LoadOptions {
            subsample_dt,
            obs_tolerance: (0.5 * subsample_dt).min(0.1),
        }
    }
}

fn parse_rows(path: &Path, cols: usize) -> Result<Vec<(usize, Vec<f64>)>, EvalError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| EvalError::Parse {
        file: file.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| EvalError::Parse {
            file: file.clone(),
            line: i + 1,
            msg,
        };
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("not a number: {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() < cols {
            return Err(err(format!("expected {cols} columns, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        rows.push((i + 1, vals));
    }
    Ok(rows)
}

fn check_times(path: &Path, rows: &[(usize, Vec<f64>)], strict: bool) -> Result<(), EvalError> {
    for w in rows.windows(2) {
        let (a, b) = (w[0].1[0], w[1].1[0]);
        if b < a || (strict && b == a) {
            return Err(EvalError::Parse {
                file: path.display().to_string(),
                line: w[1].0,
                msg: format!("timestamp {b} does not increase after {a}"),
            });
        }
    }
    Ok(())
}

fn as_id(path: &Path, line: usize, v: f64) -> Result<u32, EvalError> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(EvalError::Parse {
            file: path.display().to_string(),
            line,
            msg: format!("{v} is not an id"),
        });
    }
    Ok(v as u32)
}

fn interpolate(gt: &[GroundTruthSample], t: f64) -> ManifoldPoint {
    let i = gt.partition_point(|s| s.time <= t).clamp(1, gt.len().max(2) - 1);
    if gt.len() == 1 {
        return ManifoldPoint::se2(gt[0].x, gt[0].y, gt[0].theta);
    }
    let (a, b) = (&gt[i - 1], &gt[i]);
    let u = ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
    ManifoldPoint::se2(
        a.x + u * (b.x - a.x),
        a.y + u * (b.y - a.y),
        wrap_angle(a.theta + u * wrap_angle(b.theta - a.theta)),
    )
}

/// Integrates piecewise-constant (v, ω) commands over `[a, b)`. Each sample holds
/// until the next one; before the first sample the robot is at rest.
pub fn integrate_odometry(odom: &[OdometrySample], a: f64, b: f64) -> ManifoldPoint {
    let mut pose = ManifoldPoint::se2(0.0, 0.0, 0.0);
    let start = odom.partition_point(|s| s.time <= a).saturating_sub(1);
    for (i, s) in odom.iter().enumerate().skip(start) {
        let lo = s.time.max(a);
        let hi = odom.get(i + 1).map_or(b, |n| n.time.min(b));
        if s.time >= b {
            break;
        }
        let dt = hi - lo;
        if dt <= 0.0 {
            continue;
        }
        let step = ManifoldPoint::se2(0.0, 0.0, 0.0)
            .oplus(&[s.v * dt, 0.0, s.w * dt])
            .expect("se2 tangent");
        pose = pose.compose(&step).expect("se2 compose");
    }
    pose
}

/// Loads a dataset directory and subsamples it at `subsample_dt` seconds.
pub fn load_mrclam(path: impl AsRef<Path>, subsample_dt: f64) -> Result<MrClamDataset, EvalError> {
    load_mrclam_with(path, &LoadOptions::new(subsample_dt))
}

pub fn load_mrclam_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<MrClamDataset, EvalError> {
    let dir = path.as_ref();
    let dt = opts.subsample_dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EvalError::Parse {
            file: dir.display().to_string(),
            line: 0,
            msg: format!("subsample interval must be positive, got {dt}"),
        });
    }

    let mut barcodes = BTreeMap::new();
    let p = dir.join("Barcodes.dat");
    for (line, r) in parse_rows(&p, 2)? {
        barcodes.insert(as_id(&p, line, r[1])?, as_id(&p, line, r[0])?);
    }
    let mut landmarks = BTreeMap::new();
    let p = dir.join("Landmark_Groundtruth.dat");
    for (line, r) in parse_rows(&p, 3)? {
        landmarks.insert(as_id(&p, line, r[0])?, [r[1], r[2]]);
    }

    let mut robots = Vec::new();
    for subject in 1.. {
        let odom_path = dir.join(format!("Robot{subject}_Odometry.dat"));
        if !odom_path.exists() {
            break;
        }
        let rows = parse_rows(&odom_path, 3)?;
        check_times(&odom_path, &rows, true)?;
        let odometry = rows
            .iter()
            .map(|(_, r)| OdometrySample {
                time: r[0],
                v: r[1],
                w: r[2],
            })
            .collect();
        let p = dir.join(format!("Robot{subject}_Measurement.dat"));
        let rows = parse_rows(&p, 4)?;
        check_times(&p, &rows, false)?;
        let mut measurements = Vec::with_capacity(rows.len());
        for (line, r) in &rows {
            measurements.push(RawMeasurement {
                time: r[0],
                barcode: as_id(&p, *line, r[1])?,
                range: r[2],
                bearing: r[3],
            });
        }
        let p = dir.join(format!("Robot{subject}_Groundtruth.dat"));
        let rows = parse_rows(&p, 4)?;
        check_times(&p, &rows, true)?;
        if rows.is_empty() {
            return Err(EvalError::Parse {
                file: p.display().to_string(),
                line: 0,
                msg: "no ground truth".into(),
            });
        }
        let groundtruth = rows
            .iter()
            .map(|(_, r)| GroundTruthSample {
                time: r[0],
                x: r[1],
                y: r[2],
                theta: r[3],
            })
            .collect();
        robots.push(MrClamRobot {
            subject,
            odometry,
            measurements,
            groundtruth,
            keyframes: Vec::new(),
            relative: Vec::new(),
            observations: Vec::new(),
        });
    }
    if robots.is_empty() {
        return Err(EvalError::Parse {
            file: dir.join("Robot1_Odometry.dat").display().to_string(),
            line: 0,
            msg: "no robot files".into(),
        });
    }

    // common interval covered by every robot's ground truth
    let start = robots
        .iter()
        .map(|r| r.groundtruth[0].time)
        .fold(f64::NEG_INFINITY, f64::max);
    let end = robots
        .iter()
        .map(|r| r.groundtruth.last().unwrap().time)
        .fold(f64::INFINITY, f64::min);
    let n = if end > start {
        ((end - start) / dt - 1e-9).ceil() as usize
    } else {
        1
    };
    let keyframe_times: Vec<f64> = (0..n).map(|k| start + k as f64 * dt).collect();

    let mut unassigned = 0;
    for r in &mut robots {
        r.keyframes = keyframe_times.iter().map(|&t| interpolate(&r.groundtruth, t)).collect();
        r.relative = keyframe_times
            .windows(2)
            .map(|w| integrate_odometry(&r.odometry, w[0], w[1]))
            .collect();
        // at most one observation per subject and keyframe: the closest in time
        let mut best: BTreeMap<(usize, u32), (f64, KeyframeObservation)> = BTreeMap::new();
        for m in &r.measurements {
            let k = ((m.time - start) / dt).round();
            let Some(&subject) = barcodes.get(&m.barcode) else {
                unassigned += 1;
                continue;
            };
            if k < 0.0 || k as usize >= n || (m.time - keyframe_times[k as usize]).abs() > opts.obs_tolerance {
                unassigned += 1;
                continue;
            }
            let k = k as usize;
            let gap = (m.time - keyframe_times[k]).abs();
            let obs = KeyframeObservation {
                keyframe: k,
                subject,
                range: m.range,
                bearing: m.bearing,
            };
            match best.get(&(k, subject)) {
                Some((g, _)) if *g <= gap => unassigned += 1,
                Some(_) => {
                    unassigned += 1;
                    best.insert((k, subject), (gap, obs));
                }
                None => {
                    best.insert((k, subject), (gap, obs));
                }
            }
        }
        r.observations = best.into_values().map(|(_, o)| o).collect();
    }
    Ok(MrClamDataset {
        subsample_dt: dt,
        keyframe_times,
        robots,
        landmarks,
        barcodes,
        unassigned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibNoise {
    pub trans_m: f64,
    pub rot_deg: f64,
}

impl Default for CalibNoise {
    fn default() -> Self {
        CalibNoise {
            trans_m: 0.05,
            rot_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrClamConfig {
    /// Keyframes kept active; older body, sensor and marker variables are frozen.
    pub window: usize,
    pub iterations_per_keyframe: usize,
    /// Perturbation applied to the (identity) sensor extrinsics before estimation.
    pub calib_noise: Option<CalibNoise>,
    pub auto_calib: bool,
    pub seed: u64,
    /// Odometry noise per keyframe: forward, lateral (m), heading (deg).
    pub odom_sigma: [f64; 3],
    /// Range (m) and bearing (deg) noise.
    pub rb_sigma: [f64; 2],
    /// Prior on the first keyframe, placed at ground truth: translation (m), heading (deg).
    pub init_sigma: [f64; 2],
    pub calib_factor_sigma: [f64; 2],
    /// Prior on `T_BS` around its initial value.
    pub calib_prior_sigma: [f64; 2],
    /// Prior on a landmark at its first observation (m).
    pub landmark_prior_sigma: f64,
    pub dcs: bool,
    pub dcs_phi: f64,
    pub regularize: bool,
    pub adaptive_reg: AdaptiveReg,
}

impl Default for MrClamConfig {
    fn default() -> Self {
        MrClamConfig {
            window: 30,
            iterations_per_keyframe: 10,
            calib_noise: None,
            auto_calib: true,
            seed: 0,
            odom_sigma: [0.05, 0.01, 5.0],
            rb_sigma: [0.08, 2.0],
            init_sigma: [0.01, 1.0],
            calib_factor_sigma: [0.01, 1.0],
            calib_prior_sigma: [0.05, 10.0],
            landmark_prior_sigma: 10.0,
            dcs: true,
            dcs_phi: 10.0,
            regularize: true,
            adaptive_reg: AdaptiveReg::default(),
        }
    }
}

/// Final estimates of an MR.CLAM run.
#[derive(Debug, Clone)]
pub struct MrClamOutcome {
    pub record: MetricsRecord,
    pub graph: Graph,
    /// Estimates of frozen variables at the moment they were frozen.
    pub frozen_at: BTreeMap<VarKey, ManifoldPoint>,
}

struct Builder<'a> {
    graph: Graph,
    cfg: &'a MrClamConfig,
    data: &'a MrClamDataset,
}

impl Builder<'_> {
    fn factor(&mut self, key: FactorKey, owner: RobotId, model: FactorModel, sigmas: &[f64], adjacency: Vec<VarKey>) -> Result<(), EvalError> {
        let reg = match model {
            FactorModel::Prior { .. } => None,
            _ => self.cfg.regularize.then_some(self.cfg.adaptive_reg),
        };
        self.graph.add_factor(FactorSpec {
            key,
            owner,
            model,
            noise_lambda: diag_info(sigmas),
            adjacency,
            reg,
        })?;
        Ok(())
    }

    fn prior(&mut self, var: VarKey, owner: RobotId, sigmas: &[f64]) -> Result<(), EvalError> {
        let mean = self.graph.estimate(&var).expect("prior on a known variable").clone();
        self.factor(FactorKey::Prior { var }, owner, FactorModel::Prior { mean }, sigmas, vec![var])
    }

    fn get(&self, key: &VarKey) -> ManifoldPoint {
        self.graph.estimate(key).expect("variable exists").clone()
    }

    fn build_keyframe(&mut self, k: usize, t_bs_init: &[ManifoldPoint]) -> Result<(), EvalError> {
        let deg = PI / 180.0;
        let cfg = *self.cfg;
        let ts = k as u32;
        let [ct, cr] = cfg.calib_factor_sigma;
        for (i, robot) in self.data.robots.iter().enumerate() {
            let r = i as RobotId;
            let body = VarKey::Body { robot: r, t: ts };
            if k == 0 {
                self.graph.add_variable(body, r, robot.keyframes[0].clone())?;
                let [it, ir] = cfg.init_sigma;
                self.prior(body, r, &[it, it, ir * deg])?;
                let ext = VarKey::ExtrinsicSensor { robot: r };
                self.graph.add_variable(ext, r, t_bs_init[i].clone())?;
                let [pt, pr] = cfg.calib_prior_sigma;
                self.prior(ext, r, &[pt, pt, pr * deg])?;
                let mk = VarKey::ExtrinsicMarker { robot: r };
                self.graph.add_variable(mk, r, ManifoldPoint::rn(&[0.0, 0.0]))?;
                self.graph.set_fixed(&mk, true)?;
                if !cfg.auto_calib {
                    self.graph.set_fixed(&ext, true)?;
                }
            } else {
                let prev = VarKey::Body { robot: r, t: ts - 1 };
                let rel = robot.relative[k - 1].clone();
                let est = self.get(&prev).compose(&rel)?;
                self.graph.add_variable(body, r, est)?;
                let [ox, oy, or] = cfg.odom_sigma;
                self.factor(
                    FactorKey::Odometry { robot: r, t: ts },
                    r,
                    FactorModel::Odometry { relative: rel },
                    &[ox, oy, or * deg],
                    vec![prev, body],
                )?;
            }
        }

        let [rs, bs] = cfg.rb_sigma;
        let dcs = cfg.dcs.then_some(DcsConfig { phi: cfg.dcs_phi });
        for (i, robot) in self.data.robots.iter().enumerate() {
            let r = i as RobotId;
            let obs: Vec<_> = robot.observations.iter().filter(|o| o.keyframe == k).copied().collect();
            if obs.is_empty() {
                continue;
            }
            let body = VarKey::Body { robot: r, t: ts };
            let sensor = VarKey::Sensor { robot: r, t: ts };
            let ext = VarKey::ExtrinsicSensor { robot: r };
            let est = self.get(&body).compose(&self.get(&ext))?;
            self.graph.add_variable(sensor, r, est)?;
            self.factor(
                FactorKey::SensorCalib { robot: r, t: ts },
                r,
                FactorModel::SensorCalibration,
                &[ct, ct, cr * deg],
                vec![sensor, body, ext],
            )?;
            for o in obs {
                let measured = RangeBearing::planar(o.range, o.bearing);
                let target = match self.data.robot_index(o.subject) {
                    Some(j) if j == i => continue,
                    Some(j) => {
                        let j = j as RobotId;
                        let marker = VarKey::Marker { robot: j, t: ts };
                        if !self.graph.contains_variable(&marker) {
                            let tb = self.get(&VarKey::Body { robot: j, t: ts });
                            let offset = self.get(&VarKey::ExtrinsicMarker { robot: j });
                            let est = tb.transform(&offset.translation().expect("vector"))?;
                            self.graph.add_variable(marker, j, ManifoldPoint::Rn(est))?;
                            self.factor(
                                FactorKey::MarkerCalib { robot: j, t: ts },
                                j,
                                FactorModel::MarkerCalibration,
                                &[ct, ct],
                                vec![marker, VarKey::Body { robot: j, t: ts }, VarKey::ExtrinsicMarker { robot: j }],
                            )?;
                        }
                        marker
                    }
                    None => {
                        let lm = VarKey::Landmark { id: o.subject };
                        if !self.graph.contains_variable(&lm) {
                            let local = DVector::from_column_slice(&[
                                o.range * o.bearing.cos(),
                                o.range * o.bearing.sin(),
                            ]);
                            let s = self.get(&sensor);
                            self.graph.add_variable(lm, r, ManifoldPoint::Rn(s.transform(&local)?))?;
                            let ls = cfg.landmark_prior_sigma;
                            self.prior(lm, r, &[ls, ls])?;
                        }
                        lm
                    }
                };
                self.factor(
                    FactorKey::RangeBearing { observer: r, target, t: ts },
                    r,
                    FactorModel::RangeBearing { measured, dcs },
                    &[rs, bs * deg],
                    vec![sensor, target],
                )?;
            }
        }
        Ok(())
    }
}

/// Runs planar sliding-window GBP over the dataset and scores the final body estimates
/// of every robot and keyframe against ground truth.
pub fn run_mrclam(data: &MrClamDataset, cfg: &MrClamConfig) -> Result<MrClamOutcome, EvalError> {
    assert!(cfg.window >= 2, "window must cover at least two keyframes");
    let deg = PI / 180.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t_bs_init: Vec<ManifoldPoint> = data
        .robots
        .iter()
        .map(|_| {
            let id = ManifoldPoint::se2(0.0, 0.0, 0.0);
            match cfg.calib_noise {
                Some(n) => {
                    let mut z = || rng.sample::<f64, _>(StandardNormal);
                    let tau = [z() * n.trans_m, z() * n.trans_m, z() * n.rot_deg * deg];
                    id.oplus(&tau).expect("se2 tangent")
                }
                None => id,
            }
        })
        .collect();

    let mut b = Builder {
        graph: Graph::new(),
        cfg,
        data,
    };
    let delivery = KeyedDropout::none();
    let mut frozen_at = BTreeMap::new();
    let mut iteration = 0u64;
    let mut sent = 0;
    let mut dropped = 0;
    for k in 0..data.n_keyframes() {
        b.build_keyframe(k, &t_bs_init)?;
        if k >= cfg.window {
            let old = (k - cfg.window) as u32;
            for r in 0..data.robots.len() as RobotId {
                for key in [
                    VarKey::Body { robot: r, t: old },
                    VarKey::Sensor { robot: r, t: old },
                    VarKey::Marker { robot: r, t: old },
                ] {
                    if let Some(v) = b.graph.variable(&key) {
                        frozen_at.insert(key, v.estimate.clone());
                        b.graph.set_frozen(&key, true)?;
                    }
                }
            }
        }
        for _ in 0..cfg.iterations_per_keyframe {
            let rep = b.graph.iterate(iteration, &delivery);
            sent += rep.stats.sent;
            dropped += rep.stats.dropped;
            iteration += 1;
        }
    }

    let mut est = BTreeMap::new();
    let mut gt = BTreeMap::new();
    for (i, robot) in data.robots.iter().enumerate() {
        for (k, truth) in robot.keyframes.iter().enumerate() {
            let key = VarKey::Body { robot: i as RobotId, t: k as u32 };
            est.insert(key, b.get(&key));
            gt.insert(key, truth.clone());
        }
    }
    let mut ext_est = BTreeMap::new();
    let mut ext_gt = BTreeMap::new();
    for i in 0..data.robots.len() as RobotId {
        let key = VarKey::ExtrinsicSensor { robot: i };
        ext_est.insert(key, b.get(&key));
        ext_gt.insert(key, ManifoldPoint::se2(0.0, 0.0, 0.0));
    }
    let record = MetricsRecord {
        seed: cfg.seed,
        motion: data.n_keyframes().saturating_sub(1) as u32,
        iteration: iteration as u32,
        ate_twb_m: rmse_ate(&est, &gt)?,
        are_twb_deg: rmse_are(&est, &gt)?,
        ate_tbs_m: rmse_ate(&ext_est, &ext_gt)?,
        are_tbs_deg: rmse_are(&ext_est, &ext_gt)?,
        ate_tbm_m: 0.0,
        energy: b.graph.total_energy(),
        msgs_sent: sent,
        msgs_dropped: dropped,
    };
    Ok(MrClamOutcome {
        record,
        graph: b.graph,
        frozen_at,
    })
}
