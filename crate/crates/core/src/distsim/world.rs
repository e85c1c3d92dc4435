use super::{NoiseConfig, WorldConfig};
use crate::factors::{predict_range_bearing, RangeBearing};
use crate::graph::{mix, RobotId};
use crate::manifold::lie::so3_exp;
use crate::manifold::ManifoldPoint;
use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Ground truth of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotTruth {
    pub id: RobotId,
    /// `T_WB` at every timestep `0..=n_steps`.
    pub poses: Vec<ManifoldPoint>,
    pub t_bs: ManifoldPoint,
    pub t_bm: DVector<f64>,
}

/// What a robot knows before solving: noisy initial pose, calibration and odometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotInputs {
    pub init_pose: ManifoldPoint,
    pub t_bs_init: ManifoldPoint,
    pub t_bm_init: DVector<f64>,
    /// `odometry[t - 1]` is the measured motion from `t - 1` to `t`.
    pub odometry: Vec<OdometryReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryReading {
    pub relative: ManifoldPoint,
    /// Per-axis noise standard deviations, translation then rotation (rad); may be zero.
    pub sigma: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub t: u32,
    pub observer: RobotId,
    pub observed: RobotId,
    pub measured: RangeBearing,
    pub is_outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub n_steps: usize,
    pub truth: Vec<RobotTruth>,
    pub inputs: Vec<RobotInputs>,
    /// `observations[t]`, ordered by observer then by range.
    pub observations: Vec<Vec<ObservationEvent>>,
}

impl World {
    pub fn n_robots(&self) -> usize {
        self.truth.len()
    }

    pub fn true_sensor(&self, robot: RobotId, t: usize) -> ManifoldPoint {
        let r = &self.truth[robot as usize];
        r.poses[t].compose(&r.t_bs).expect("se3 compose")
    }

    pub fn true_marker(&self, robot: RobotId, t: usize) -> DVector<f64> {
        let r = &self.truth[robot as usize];
        r.poses[t].transform(&r.t_bm).expect("se3 transform")
    }

    pub fn true_position(&self, robot: RobotId, t: usize) -> Vector3<f64> {
        let p = self.truth[robot as usize].poses[t]
            .translation()
            .expect("pose has a translation");
        Vector3::new(p[0], p[1], p[2])
    }
}

const WORLD_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const OUTLIER_STREAM: u64 = 3;

/// Independent generator per purpose, so that changing e.g. the outlier fraction
/// leaves trajectories and Gaussian noise untouched.
pub(crate) fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, purpose]))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let q = Quaternion::new(normal(rng), normal(rng), normal(rng), normal(rng));
    UnitQuaternion::from_quaternion(q)
}

fn perturb_pose(pose: &ManifoldPoint, rng: &mut ChaCha8Rng, sigma_t: f64, sigma_r: f64) -> ManifoldPoint {
    let tau: Vec<f64> = (0..6)
        .map(|i| normal(rng) * if i < 3 { sigma_t } else { sigma_r })
        .collect();
    pose.oplus(&tau).expect("se3 oplus")
}

/// Noise-free measurement of `marker` if it lies strictly inside the sensor's
/// azimuth/elevation field of view of half-width `fov` (rad).
pub fn observe(sensor: &ManifoldPoint, marker: &DVector<f64>, fov: f64) -> Option<RangeBearing> {
    let p = predict_range_bearing(sensor, marker).ok()?;
    let el = p.elevation.unwrap_or(0.0);
    (p.azimuth.abs() < fov && el.abs() < fov).then_some(p)
}

/// Samples trajectories, calibrations, odometry and range-bearing observations.
pub fn generate_world(
    n_robots: usize,
    n_steps: usize,
    noise: &NoiseConfig,
    geometry: &WorldConfig,
    seed: u64,
) -> World {
    assert!(n_robots >= 2, "a world needs at least two robots");
    let mut wr = stream(seed, WORLD_STREAM);
    let mut nr = stream(seed, NOISE_STREAM);
    let mut or = stream(seed, OUTLIER_STREAM);

    let mut truth = Vec::with_capacity(n_robots);
    let mut motions = Vec::with_capacity(n_robots);
    for id in 0..n_robots {
        let start = ManifoldPoint::se3(
            uniform3(&mut wr, 0.0, geometry.arena_size),
            random_rotation(&mut wr),
        );
        let ct = geometry.calib_trans_extent;
        let cr = geometry.calib_rot_extent;
        let t_bs = ManifoldPoint::se3(uniform3(&mut wr, -ct, ct), so3_exp(&uniform3(&mut wr, -cr, cr)));
        let m = uniform3(&mut wr, -ct, ct);
        let t_bm = DVector::from_column_slice(m.as_slice());
        let mut poses = vec![start];
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let dt = uniform3(&mut wr, 0.0, geometry.max_step_translation);
            let dw = uniform3(&mut wr, -geometry.max_step_rotation, geometry.max_step_rotation);
            let rel = ManifoldPoint::se3(dt, so3_exp(&dw));
            let next = poses.last().unwrap().compose(&rel).expect("se3 compose");
            poses.push(next);
            steps.push((dt, dw));
        }
        truth.push(RobotTruth {
            id: id as RobotId,
            poses,
            t_bs,
            t_bm,
        });
        motions.push(steps);
    }

    let deg = std::f64::consts::PI / 180.0;
    let mut inputs = Vec::with_capacity(n_robots);
    for (r, steps) in truth.iter().zip(&motions) {
        let init_pose = perturb_pose(
            &r.poses[0],
            &mut nr,
            noise.init_trans_sigma,
            noise.init_rot_sigma_deg * deg,
        );
        let t_bs_init = perturb_pose(
            &r.t_bs,
            &mut nr,
            noise.calib_sensor_trans_sigma,
            noise.calib_sensor_rot_sigma_deg * deg,
        );
        let t_bm_init = DVector::from_fn(3, |i, _| {
            r.t_bm[i] + normal(&mut nr) * noise.calib_marker_trans_sigma
        });
        let mut odometry = Vec::with_capacity(n_steps);
        for (dt, dw) in steps {
            let mut sigma = [0.0; 6];
            for i in 0..3 {
                sigma[i] = noise.odom_trans_sigma * dt[i].abs();
                sigma[i + 3] = noise.odom_rot_sigma_deg * dw[i].abs() / 90.0;
            }
            let nt = Vector3::from_fn(|i, _| normal(&mut nr) * sigma[i]);
            let nw = Vector3::from_fn(|i, _| normal(&mut nr) * sigma[i + 3]);
            let relative = ManifoldPoint::se3(dt + nt, so3_exp(dw) * so3_exp(&nw));
            odometry.push(OdometryReading { relative, sigma });
        }
        inputs.push(RobotInputs {
            init_pose,
            t_bs_init,
            t_bm_init,
            odometry,
        });
    }

    let mut world = World {
        n_steps,
        truth,
        inputs,
        observations: Vec::with_capacity(n_steps + 1),
    };
    let fov = geometry.fov_deg * deg;
    for t in 0..=n_steps {
        let mut events = Vec::new();
        for a in 0..n_robots as RobotId {
            let sensor = world.true_sensor(a, t);
            let mut visible: Vec<(RobotId, RangeBearing)> = (0..n_robots as RobotId)
                .filter(|&b| b != a)
                .filter_map(|b| Some((b, observe(&sensor, &world.true_marker(b, t), fov)?)))
                .collect();
            visible.sort_by(|x, y| x.1.range.total_cmp(&y.1.range));
            visible.truncate(geometry.max_observed);
            for (b, p) in visible {
                let clean = RangeBearing::spherical(
                    p.range + normal(&mut nr) * noise.rb_range_sigma,
                    p.azimuth + normal(&mut nr) * noise.rb_bearing_sigma_deg * deg,
                    p.elevation.unwrap_or(0.0) + normal(&mut nr) * noise.rb_bearing_sigma_deg * deg,
                );
                let u: f64 = or.random();
                let outlier = RangeBearing::spherical(
                    or.random_range(0.0..geometry.outlier_max_range),
                    or.random_range(-fov..fov),
                    or.random_range(-fov..fov),
                );
                let is_outlier = u < noise.outlier_frac;
                events.push(ObservationEvent {
                    t: t as u32,
                    observer: a,
                    observed: b,
                    measured: if is_outlier { outlier } else { clean },
                    is_outlier,
                });
            }
        }
        world.observations.push(events);
    }
    world
}
