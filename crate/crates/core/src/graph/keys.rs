use serde::{Deserialize, Serialize};
use std::fmt;

pub type RobotId = u32;

/// Identity of a variable in the global graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VarKey {
    /// `T_WB` of a robot at a timestep.
    Body { robot: RobotId, t: u32 },
    /// `T_WS` of a robot's sensor at a timestep.
    Sensor { robot: RobotId, t: u32 },
    /// `t_WM` of a robot's marker at a timestep.
    Marker { robot: RobotId, t: u32 },
    /// `T_BS`.
    ExtrinsicSensor { robot: RobotId },
    /// `t_BM`.
    ExtrinsicMarker { robot: RobotId },
    /// A static landmark.
    Landmark { id: u32 },
    /// Free-standing variable for generic graphs.
    Node { id: u32 },
}

impl VarKey {
    pub fn robot(&self) -> Option<RobotId> {
        match *self {
            VarKey::Body { robot, .. }
            | VarKey::Sensor { robot, .. }
            | VarKey::Marker { robot, .. }
            | VarKey::ExtrinsicSensor { robot }
            | VarKey::ExtrinsicMarker { robot } => Some(robot),
            VarKey::Landmark { .. } | VarKey::Node { .. } => None,
        }
    }

    pub fn is_extrinsic(&self) -> bool {
        matches!(self, VarKey::ExtrinsicSensor { .. } | VarKey::ExtrinsicMarker { .. })
    }

    pub fn code(&self) -> u64 {
        match *self {
            VarKey::Body { robot, t } => mix(&[1, robot as u64, t as u64]),
            VarKey::Sensor { robot, t } => mix(&[2, robot as u64, t as u64]),
            VarKey::Marker { robot, t } => mix(&[3, robot as u64, t as u64]),
            VarKey::ExtrinsicSensor { robot } => mix(&[4, robot as u64]),
            VarKey::ExtrinsicMarker { robot } => mix(&[5, robot as u64]),
            VarKey::Landmark { id } => mix(&[6, id as u64]),
            VarKey::Node { id } => mix(&[7, id as u64]),
        }
    }
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKey::Body { robot, t } => write!(f, "T_WB[{robot}]@{t}"),
            VarKey::Sensor { robot, t } => write!(f, "T_WS[{robot}]@{t}"),
            VarKey::Marker { robot, t } => write!(f, "t_WM[{robot}]@{t}"),
            VarKey::ExtrinsicSensor { robot } => write!(f, "T_BS[{robot}]"),
            VarKey::ExtrinsicMarker { robot } => write!(f, "t_BM[{robot}]"),
            VarKey::Landmark { id } => write!(f, "L{id}"),
            VarKey::Node { id } => write!(f, "x{id}"),
        }
    }
}

/// Identity of a factor in the global graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FactorKey {
    Prior { var: VarKey },
    Odometry { robot: RobotId, t: u32 },
    SensorCalib { robot: RobotId, t: u32 },
    MarkerCalib { robot: RobotId, t: u32 },
    RangeBearing { observer: RobotId, target: VarKey, t: u32 },
    Node { id: u32 },
}

impl FactorKey {
    /// Robot that owns the factor, if it belongs to one.
    pub fn robot(&self) -> Option<RobotId> {
        match *self {
            FactorKey::Prior { var } => var.robot(),
            FactorKey::Odometry { robot, .. }
            | FactorKey::SensorCalib { robot, .. }
            | FactorKey::MarkerCalib { robot, .. } => Some(robot),
            FactorKey::RangeBearing { observer, .. } => Some(observer),
            FactorKey::Node { .. } => None,
        }
    }

    pub fn code(&self) -> u64 {
        match *self {
            FactorKey::Prior { var } => mix(&[11, var.code()]),
            FactorKey::Odometry { robot, t } => mix(&[12, robot as u64, t as u64]),
            FactorKey::SensorCalib { robot, t } => mix(&[13, robot as u64, t as u64]),
            FactorKey::MarkerCalib { robot, t } => mix(&[14, robot as u64, t as u64]),
            FactorKey::RangeBearing {
                observer,
                target,
                t,
            } => mix(&[15, observer as u64, target.code(), t as u64]),
            FactorKey::Node { id } => mix(&[16, id as u64]),
        }
    }
}

impl fmt::Display for FactorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorKey::Prior { var } => write!(f, "prior({var})"),
            FactorKey::Odometry { robot, t } => write!(f, "odom[{robot}]@{t}"),
            FactorKey::SensorCalib { robot, t } => write!(f, "calib_s[{robot}]@{t}"),
            FactorKey::MarkerCalib { robot, t } => write!(f, "calib_m[{robot}]@{t}"),
            FactorKey::RangeBearing {
                observer,
                target,
                t,
            } => write!(f, "rb[{observer}->{target}]@{t}"),
            FactorKey::Node { id } => write!(f, "f{id}"),
        }
    }
}

/// Endpoint of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "node", content = "key", rename_all = "snake_case")]
pub enum NodeRef {
    Var(VarKey),
    Factor(FactorKey),
}

impl NodeRef {
    pub fn code(&self) -> u64 {
        match self {
            NodeRef::Var(v) => mix(&[21, v.code()]),
            NodeRef::Factor(f) => mix(&[22, f.code()]),
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Var(v) => v.fmt(f),
            NodeRef::Factor(k) => k.fmt(f),
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x51_7CC1_B727_220A, |h, &p| splitmix64(h ^ p))
}

/// Uniform draw in `[0, 1)` determined entirely by `parts`.
pub fn keyed_uniform(parts: &[u64]) -> f64 {
    (mix(parts) >> 11) as f64 / (1u64 << 53) as f64
}
