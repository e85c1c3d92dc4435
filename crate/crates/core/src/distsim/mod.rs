//! Multi-robot simulation: ground-truth world, per-robot graphs, lossy
//! inter-robot channels and the incremental grow-and-solve loop.

mod sim;
mod world;

pub use sim::{
    centralized_problem, exchange, run_scenario, scenario_metrics, ChannelDelivery, ExchangeReport, IterationOutcome,
    MessageTrace, ScenarioOutcome, SimError, Simulation, StepDelta,
};
pub(crate) use sim::diag_info;
pub use world::{generate_world, observe, ObservationEvent, OdometryReading, RobotInputs, RobotTruth, World};

pub use crate::eval::PoseMetrics;
use crate::factors::{AdaptiveReg, DcsConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Smallest standard deviation turned into an information weight.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Metres per metre travelled, per axis.
    pub odom_trans_sigma: f64,
    /// Degrees per 90 degrees rotated, per axis.
    pub odom_rot_sigma_deg: f64,
    pub rb_range_sigma: f64,
    pub rb_bearing_sigma_deg: f64,
    pub init_trans_sigma: f64,
    pub init_rot_sigma_deg: f64,
    pub calib_sensor_trans_sigma: f64,
    pub calib_marker_trans_sigma: f64,
    pub calib_sensor_rot_sigma_deg: f64,
    pub outlier_frac: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            odom_trans_sigma: 0.01,
            odom_rot_sigma_deg: 1.0,
            rb_range_sigma: 0.05,
            rb_bearing_sigma_deg: 5.0,
            init_trans_sigma: 0.01,
            init_rot_sigma_deg: 1.0,
            calib_sensor_trans_sigma: 0.05,
            calib_marker_trans_sigma: 0.05,
            calib_sensor_rot_sigma_deg: 5.0,
            outlier_frac: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        NoiseConfig {
            odom_trans_sigma: 0.0,
            odom_rot_sigma_deg: 0.0,
            rb_range_sigma: 0.0,
            rb_bearing_sigma_deg: 0.0,
            init_trans_sigma: 0.0,
            init_rot_sigma_deg: 0.0,
            calib_sensor_trans_sigma: 0.0,
            calib_marker_trans_sigma: 0.0,
            calib_sensor_rot_sigma_deg: 0.0,
            outlier_frac: 0.0,
        }
    }

    /// Name of the first invalid field.
    pub fn validate(&self) -> Result<(), &'static str> {
        let fields = [
            ("odom_trans_sigma", self.odom_trans_sigma),
            ("odom_rot_sigma_deg", self.odom_rot_sigma_deg),
            ("rb_range_sigma", self.rb_range_sigma),
            ("rb_bearing_sigma_deg", self.rb_bearing_sigma_deg),
            ("init_trans_sigma", self.init_trans_sigma),
            ("init_rot_sigma_deg", self.init_rot_sigma_deg),
            ("calib_sensor_trans_sigma", self.calib_sensor_trans_sigma),
            ("calib_marker_trans_sigma", self.calib_marker_trans_sigma),
            ("calib_sensor_rot_sigma_deg", self.calib_sensor_rot_sigma_deg),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(name);
            }
        }
        if !(0.0..=1.0).contains(&self.outlier_frac) {
            return Err("outlier_frac");
        }
        Ok(())
    }
}

/// Geometry of the simulated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Edge of the cube initial positions are drawn from (m).
    pub arena_size: f64,
    /// Per-axis translation per motion is U(0, max) m.
    pub max_step_translation: f64,
    /// Per-axis rotation-vector component per motion is U(-max, max) rad.
    pub max_step_rotation: f64,
    /// Half-width of the azimuth and elevation field of view (deg).
    pub fov_deg: f64,
    /// Each sensor reports at most this many of the closest visible markers.
    pub max_observed: usize,
    /// Ground-truth extrinsics are drawn per axis from U(-e, e) (m, rad).
    pub calib_trans_extent: f64,
    pub calib_rot_extent: f64,
    /// Outlier ranges are uniform in [0, max] m.
    pub outlier_max_range: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            arena_size: 20.0,
            max_step_translation: 1.0,
            max_step_rotation: PI,
            fov_deg: 60.0,
            max_observed: 3,
            calib_trans_extent: 0.3,
            calib_rot_extent: 0.3,
            outlier_max_range: 30.0,
        }
    }
}

/// How the estimator is set up on top of the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Estimate `T_BS`/`t_BM`; when false they are held at their initial values.
    pub auto_calib: bool,
    /// Noise of the calibration factors linking world-frame sensor/marker to body and extrinsic.
    pub calib_factor_trans_sigma: f64,
    pub calib_factor_rot_sigma_deg: f64,
    /// Extrinsic priors are this many times wider than the calibration noise.
    pub calib_prior_scale: f64,
    /// DCS kernel on range-bearing factors.
    pub dcs: bool,
    pub dcs_phi: f64,
    /// Adaptive regulariser on every non-prior factor.
    pub regularize: bool,
    pub adaptive_reg: AdaptiveReg,
    /// Drop probability for messages between nodes of the same robot.
    pub internal_drop: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            auto_calib: true,
            calib_factor_trans_sigma: 0.01,
            calib_factor_rot_sigma_deg: 1.0,
            calib_prior_scale: 10.0,
            dcs: true,
            dcs_phi: 10.0,
            regularize: true,
            adaptive_reg: AdaptiveReg::default(),
            internal_drop: 0.3,
        }
    }
}

impl SolverConfig {
    pub fn dcs_config(&self) -> Option<DcsConfig> {
        self.dcs.then_some(DcsConfig { phi: self.dcs_phi })
    }

    pub fn regularizer(&self) -> Option<AdaptiveReg> {
        self.regularize.then_some(self.adaptive_reg)
    }
}

/// Simulated inter-robot link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    /// Drop probability of each inter-robot message.
    pub drop_prob: f64,
    /// Maximum true distance between communicating robots (m); `None` is unlimited.
    pub comm_range: Option<f64>,
    /// Mixed with the scenario seed to key dropout decisions.
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            drop_prob: 0.3,
            comm_range: None,
            seed: 0,
        }
    }
}

impl ChannelModel {
    pub fn perfect() -> Self {
        ChannelModel {
            drop_prob: 0.0,
            comm_range: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Grow the graph one motion at a time and iterate after each.
    #[default]
    Incremental,
    /// Build the whole graph first, then iterate `iterations_per_motion` times in total.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// One graph per robot, messages crossing robots go through the channel.
    #[default]
    Distributed,
    /// A single graph holding every node.
    Centralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_robots: usize,
    pub n_motions: usize,
    pub iterations_per_motion: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub execution: Execution,
    pub noise: NoiseConfig,
    pub world: WorldConfig,
    pub solver: SolverConfig,
    pub channel: ChannelModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_robots: 64,
            n_motions: 50,
            iterations_per_motion: 30,
            seed: 0,
            schedule: Schedule::Incremental,
            execution: Execution::Distributed,
            noise: NoiseConfig::default(),
            world: WorldConfig::default(),
            solver: SolverConfig::default(),
            channel: ChannelModel::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn generate_world(&self) -> World {
        generate_world(self.n_robots, self.n_motions, &self.noise, &self.world, self.seed)
    }
}

#[cfg(test)]
mod tests;
