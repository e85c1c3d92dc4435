//! Spherical (and planar) range-bearing measurement model.

use super::FactorError;
use crate::manifold::{wrap_angle, ManifoldPoint};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Predictions closer than this to the sensor origin are degenerate.
pub const MIN_RANGE: f64 = 1e-9;
/// Elevations this close to ±90° have no defined azimuth.
pub const GIMBAL_TOL: f64 = 1e-6;

/// Range (m), azimuth and elevation (rad). Planar measurements have no elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBearing {
    pub range: f64,
    pub azimuth: f64,
    pub elevation: Option<f64>,
}

impl RangeBearing {
    pub fn spherical(range: f64, azimuth: f64, elevation: f64) -> Self {
        RangeBearing {
            range,
            azimuth: wrap_angle(azimuth),
            elevation: Some(wrap_angle(elevation)),
        }
    }

    pub fn planar(range: f64, azimuth: f64) -> Self {
        RangeBearing {
            range,
            azimuth: wrap_angle(azimuth),
            elevation: None,
        }
    }

    pub fn dim(&self) -> usize {
        if self.elevation.is_some() {
            3
        } else {
            2
        }
    }

    /// The measurement as a point on ⟨R, SO2, SO2⟩ (or ⟨R, SO2⟩).
    pub fn to_point(&self) -> ManifoldPoint {
        let mut parts = vec![
            ManifoldPoint::rn(&[self.range]),
            ManifoldPoint::so2(self.azimuth),
        ];
        if let Some(e) = self.elevation {
            parts.push(ManifoldPoint::so2(e));
        }
        ManifoldPoint::Composite(parts)
    }

    pub fn from_point(p: &ManifoldPoint) -> Option<Self> {
        let ManifoldPoint::Composite(parts) = p else {
            return None;
        };
        let range = match parts.first()? {
            ManifoldPoint::Rn(v) if v.len() == 1 => v[0],
            _ => return None,
        };
        let azimuth = match parts.get(1)? {
            ManifoldPoint::So2(a) => *a,
            _ => return None,
        };
        let elevation = match parts.get(2) {
            Some(ManifoldPoint::So2(e)) => Some(*e),
            None => None,
            _ => return None,
        };
        Some(RangeBearing {
            range,
            azimuth,
            elevation,
        })
    }

    /// `self ⊟ other`: range difference and wrapped angle differences.
    pub fn boxminus(&self, other: &RangeBearing) -> DVector<f64> {
        let mut r = vec![
            self.range - other.range,
            wrap_angle(self.azimuth - other.azimuth),
        ];
        if let (Some(a), Some(b)) = (self.elevation, other.elevation) {
            r.push(wrap_angle(a - b));
        }
        DVector::from_vec(r)
    }
}

/// Position of the marker in the sensor frame.
fn sensor_frame_point(sensor: &ManifoldPoint, marker: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
    let t = sensor.translation().ok_or(FactorError::UnexpectedVariable)?;
    let r = sensor.rotation_matrix().ok_or(FactorError::UnexpectedVariable)?;
    if t.len() != marker.len() {
        return Err(FactorError::UnexpectedVariable);
    }
    Ok(r.transpose() * (marker - t))
}

fn spherical_of(p: &DVector<f64>) -> Result<RangeBearing, FactorError> {
    let range = p.norm();
    if range < MIN_RANGE {
        return Err(FactorError::DegenerateGeometry);
    }
    if p.len() == 2 {
        return Ok(RangeBearing::planar(range, p[1].atan2(p[0])));
    }
    let elevation = (p[2] / range).clamp(-1.0, 1.0).asin();
    if FRAC_PI_2 - elevation.abs() < GIMBAL_TOL {
        return Err(FactorError::GimbalSingularity);
    }
    Ok(RangeBearing::spherical(range, p[1].atan2(p[0]), elevation))
}

/// Predicted measurement of the marker at world position `marker` from sensor pose `sensor`.
pub fn predict_range_bearing(
    sensor: &ManifoldPoint,
    marker: &DVector<f64>,
) -> Result<RangeBearing, FactorError> {
    spherical_of(&sensor_frame_point(sensor, marker)?)
}

/// Residual `measured ⊟ h(sensor, marker)`.
pub fn range_bearing_residual(
    measured: &RangeBearing,
    sensor: &ManifoldPoint,
    marker: &DVector<f64>,
) -> Result<DVector<f64>, FactorError> {
    let pred = predict_range_bearing(sensor, marker)?;
    if pred.dim() != measured.dim() {
        return Err(FactorError::UnexpectedVariable);
    }
    Ok(measured.boxminus(&pred))
}

/// Residual and its Jacobians w.r.t. right perturbations of the sensor pose and
/// additive perturbations of the marker position.
pub(crate) fn evaluate(
    measured: &RangeBearing,
    sensor: &ManifoldPoint,
    marker: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), FactorError> {
    let p = sensor_frame_point(sensor, marker)?;
    let pred = spherical_of(&p)?;
    if pred.dim() != measured.dim() {
        return Err(FactorError::UnexpectedVariable);
    }
    let residual = measured.boxminus(&pred);
    let rot_t = sensor.rotation_matrix().ok_or(FactorError::UnexpectedVariable)?.transpose();

    if p.len() == 2 {
        let (x, y) = (p[0], p[1]);
        let r2 = x * x + y * y;
        let r = r2.sqrt();
        let dh_dp = DMatrix::from_row_slice(2, 2, &[x / r, y / r, -y / r2, x / r2]);
        // p(S ⊕ δ) ≈ p - ρ + θ (y, -x)
        let dp_ds = DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, y, 0.0, -1.0, -x]);
        let j_sensor = -(&dh_dp * dp_ds);
        let j_marker = -(&dh_dp * rot_t);
        return Ok((residual, j_sensor, j_marker));
    }

    let (x, y, z) = (p[0], p[1], p[2]);
    let rxy2 = x * x + y * y;
    let rxy = rxy2.sqrt();
    let r2 = rxy2 + z * z;
    let r = r2.sqrt();
    let dh_dp = Matrix3::new(
        x / r,
        y / r,
        z / r,
        -y / rxy2,
        x / rxy2,
        0.0,
        -x * z / (r2 * rxy),
        -y * z / (r2 * rxy),
        rxy / r2,
    );
    let dh_dp = DMatrix::from_column_slice(3, 3, dh_dp.as_slice());
    // p(S ⊕ δ) ≈ p - ρ + [p]x φ
    let px = crate::manifold::lie::skew(&Vector3::new(x, y, z));
    let mut dp_ds = DMatrix::zeros(3, 6);
    dp_ds.view_mut((0, 0), (3, 3)).copy_from(&(-DMatrix::<f64>::identity(3, 3)));
    dp_ds
        .view_mut((0, 3), (3, 3))
        .copy_from(&DMatrix::from_column_slice(3, 3, px.as_slice()));
    let j_sensor = -(&dh_dp * dp_ds);
    let j_marker = -(&dh_dp * rot_t);
    Ok((residual, j_sensor, j_marker))
}
