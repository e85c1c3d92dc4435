//! Measurement models: priors, odometry, sensor/marker calibration loops and
//! range-bearing observations, plus their linearisation into Gaussian
//! potentials over the stacked tangent space of the adjacent variables.
//!
//! Every model exposes a residual `r(x) = z̄ ⊟ h(x)` and analytic Jacobians
//! `∂r/∂δ` for right perturbations `x ⊕ δ` of each adjacent variable.

mod range_bearing;
mod robust;

pub use range_bearing::{
    predict_range_bearing, range_bearing_residual, RangeBearing, GIMBAL_TOL, MIN_RANGE,
};
pub use robust::{
    apply_regularizer, dcs_scale, update_adaptive_reg, AdaptiveReg, DcsConfig,
};

use crate::gaussian::CanonicalGaussian;
use crate::manifold::{ManifoldError, ManifoldKind, ManifoldPoint};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("marker coincides with the sensor origin")]
    DegenerateGeometry,
    #[error("elevation at ±90°, azimuth undefined")]
    GimbalSingularity,
    #[error("expected {expected} adjacent variables, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("adjacent variable has the wrong kind for this factor")]
    UnexpectedVariable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Prior,
    Odometry,
    SensorCalibration,
    MarkerCalibration,
    RangeBearing,
    Linear,
}

/// Measurement carried by a factor. Adjacency order per variant:
///
/// | variant             | adjacent variables        |
/// |---------------------|---------------------------|
/// | `Prior`             | `x`                       |
/// | `Odometry`          | `T_WB(t-1)`, `T_WB(t)`    |
/// | `SensorCalibration` | `T_WS`, `T_WB`, `T_BS`    |
/// | `MarkerCalibration` | `t_WM`, `T_WB`, `t_BM`    |
/// | `RangeBearing`      | `T_WS` (observer), `t_WM` (observed) |
/// | `Linear`            | one Euclidean variable per coefficient block |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorModel {
    Prior { mean: ManifoldPoint },
    Odometry { relative: ManifoldPoint },
    SensorCalibration,
    MarkerCalibration,
    RangeBearing {
        measured: RangeBearing,
        dcs: Option<DcsConfig>,
    },
    /// `r = b - Σ A_i x_i`.
    Linear {
        coefficients: Vec<DMatrix<f64>>,
        offset: DVector<f64>,
    },
}

/// Residual and one Jacobian block per adjacent variable.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

/// Linearised factor potential over the stacked tangent space of its active slots.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub potential: CanonicalGaussian,
    /// Raw energy `rᵀ Λ r` at the linearisation point (before robust scaling).
    pub energy: f64,
    /// Offset and dimension of each slot in the stacked space; `None` for inactive slots.
    pub blocks: Vec<Option<(usize, usize)>>,
}

fn rn_vector(p: &ManifoldPoint) -> Result<&DVector<f64>, FactorError> {
    match p {
        ManifoldPoint::Rn(v) => Ok(v),
        _ => Err(FactorError::UnexpectedVariable),
    }
}

fn require_pose(p: &ManifoldPoint) -> Result<(), FactorError> {
    match p {
        ManifoldPoint::Se2 { .. } | ManifoldPoint::Se3 { .. } => Ok(()),
        _ => Err(FactorError::UnexpectedVariable),
    }
}

/// `z̄ ⊖ (T_prev⁻¹ T_curr)`.
pub fn odometry_residual(
    prev: &ManifoldPoint,
    curr: &ManifoldPoint,
    measured: &ManifoldPoint,
) -> Result<DVector<f64>, FactorError> {
    let predicted = prev.inverse()?.compose(curr)?;
    Ok(measured.ominus(&predicted)?.into_inner())
}

/// `Log(T_WS⁻¹ T_WB T_BS)`.
pub fn calibration_residual(
    world_sensor: &ManifoldPoint,
    world_body: &ManifoldPoint,
    body_sensor: &ManifoldPoint,
) -> Result<DVector<f64>, FactorError> {
    let loop_error = world_sensor
        .inverse()?
        .compose(&world_body.compose(body_sensor)?)?;
    Ok(loop_error.log()?.into_inner())
}

/// `t_WM - T_WB ∘ t_BM`.
pub fn marker_calibration_residual(
    world_marker: &DVector<f64>,
    world_body: &ManifoldPoint,
    body_marker: &DVector<f64>,
) -> Result<DVector<f64>, FactorError> {
    Ok(world_marker - world_body.transform(body_marker)?)
}

impl FactorModel {
    pub fn kind(&self) -> FactorKind {
        match self {
            FactorModel::Prior { .. } => FactorKind::Prior,
            FactorModel::Odometry { .. } => FactorKind::Odometry,
            FactorModel::SensorCalibration => FactorKind::SensorCalibration,
            FactorModel::MarkerCalibration => FactorKind::MarkerCalibration,
            FactorModel::RangeBearing { .. } => FactorKind::RangeBearing,
            FactorModel::Linear { .. } => FactorKind::Linear,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            FactorModel::Prior { .. } => 1,
            FactorModel::Odometry { .. } | FactorModel::RangeBearing { .. } => 2,
            FactorModel::SensorCalibration | FactorModel::MarkerCalibration => 3,
            FactorModel::Linear { coefficients, .. } => coefficients.len(),
        }
    }

    fn check_arity(&self, got: usize) -> Result<(), FactorError> {
        let expected = self.arity();
        if got != expected {
            return Err(FactorError::Arity { expected, got });
        }
        Ok(())
    }

    pub fn residual(&self, x: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError> {
        self.check_arity(x.len())?;
        match self {
            FactorModel::Prior { mean } => Ok(mean.ominus(x[0])?.into_inner()),
            FactorModel::Odometry { relative } => odometry_residual(x[0], x[1], relative),
            FactorModel::SensorCalibration => calibration_residual(x[0], x[1], x[2]),
            FactorModel::MarkerCalibration => {
                marker_calibration_residual(rn_vector(x[0])?, x[1], rn_vector(x[2])?)
            }
            FactorModel::RangeBearing { measured, .. } => {
                range_bearing_residual(measured, x[0], rn_vector(x[1])?)
            }
            FactorModel::Linear {
                coefficients,
                offset,
            } => {
                let mut r = offset.clone();
                for (a, p) in coefficients.iter().zip(x) {
                    let v = rn_vector(p)?;
                    if a.nrows() != r.len() || a.ncols() != v.len() {
                        return Err(FactorError::UnexpectedVariable);
                    }
                    r -= a * v;
                }
                Ok(r)
            }
        }
    }

    /// Residual and analytic Jacobians at `x`.
    pub fn evaluate(&self, x: &[&ManifoldPoint]) -> Result<Evaluation, FactorError> {
        self.check_arity(x.len())?;
        match self {
            FactorModel::Prior { mean } => {
                // r = Log(x⁻¹ z); x ⊕ δ gives Log(E Exp(-Ad_{E⁻¹} δ)) with E = x⁻¹ z
                let e = x[0].inverse().and_then(|inv| inv.compose(mean));
                let (residual, jac) = match e {
                    Ok(e) => {
                        let r = e.log()?.into_inner();
                        let jr = ManifoldPoint::right_jacobian_inv(&e.kind(), r.as_slice());
                        let j = -(jr * e.inverse()?.adjoint());
                        (r, j)
                    }
                    Err(ManifoldError::NotAGroup(_)) => {
                        let r = mean.ominus(x[0])?.into_inner();
                        let d = r.len();
                        (r, -DMatrix::identity(d, d))
                    }
                    Err(err) => return Err(err.into()),
                };
                Ok(Evaluation {
                    residual,
                    jacobians: vec![jac],
                })
            }
            FactorModel::Odometry { relative } => {
                require_pose(x[0])?;
                require_pose(x[1])?;
                // E = B⁻¹ A z̄, r = Log(E)
                let e = x[1].inverse()?.compose(x[0])?.compose(relative)?;
                let r = e.log()?.into_inner();
                let jr = ManifoldPoint::right_jacobian_inv(&e.kind(), r.as_slice());
                let j_prev = &jr * relative.inverse()?.adjoint();
                let j_curr = -(&jr * e.inverse()?.adjoint());
                Ok(Evaluation {
                    residual: r,
                    jacobians: vec![j_prev, j_curr],
                })
            }
            FactorModel::SensorCalibration => {
                for p in x {
                    require_pose(p)?;
                }
                // E = S⁻¹ B C, r = Log(E)
                let e = x[0].inverse()?.compose(x[1])?.compose(x[2])?;
                let r = e.log()?.into_inner();
                let jr = ManifoldPoint::right_jacobian_inv(&e.kind(), r.as_slice());
                let j_sensor = -(&jr * e.inverse()?.adjoint());
                let j_body = &jr * x[2].inverse()?.adjoint();
                Ok(Evaluation {
                    residual: r,
                    jacobians: vec![j_sensor, j_body, jr],
                })
            }
            FactorModel::MarkerCalibration => {
                let m = rn_vector(x[0])?;
                let p = rn_vector(x[2])?;
                let body = x[1];
                let residual = marker_calibration_residual(m, body, p)?;
                let rot = body.rotation_matrix().ok_or(FactorError::UnexpectedVariable)?;
                let d = m.len();
                // B ⊕ δ moves the marker by R (ρ + ω × p)
                let mut db = DMatrix::zeros(d, body.tangent_dim());
                db.view_mut((0, 0), (d, d)).copy_from(&DMatrix::identity(d, d));
                if d == 3 {
                    let px = crate::manifold::lie::skew(&nalgebra::Vector3::new(p[0], p[1], p[2]));
                    db.view_mut((0, 3), (3, 3))
                        .copy_from(&DMatrix::from_column_slice(3, 3, (-px).as_slice()));
                } else {
                    db[(0, 2)] = -p[1];
                    db[(1, 2)] = p[0];
                }
                let j_body = -(&rot * db);
                let j_local = -rot;
                Ok(Evaluation {
                    residual,
                    jacobians: vec![DMatrix::identity(d, d), j_body, j_local],
                })
            }
            FactorModel::RangeBearing { measured, .. } => {
                let (residual, js, jm) = range_bearing::evaluate(measured, x[0], rn_vector(x[1])?)?;
                Ok(Evaluation {
                    residual,
                    jacobians: vec![js, jm],
                })
            }
            FactorModel::Linear { coefficients, .. } => Ok(Evaluation {
                residual: self.residual(x)?,
                jacobians: coefficients.iter().map(|a| -a).collect(),
            }),
        }
    }

    /// Robust scale applied to the information matrix at `energy` (1 for non-robust factors).
    pub fn robust_weight(&self, energy: f64) -> f64 {
        match self {
            FactorModel::RangeBearing { dcs: Some(cfg), .. } => {
                let s = dcs_scale(energy, cfg);
                s * s
            }
            _ => 1.0,
        }
    }

    /// Dimension of the residual for given adjacent kinds (used for sanity checks).
    pub fn residual_dim(&self, kinds: &[ManifoldKind]) -> usize {
        match self {
            FactorModel::Prior { mean } => mean.tangent_dim(),
            FactorModel::Odometry { relative } => relative.tangent_dim(),
            FactorModel::SensorCalibration => kinds.first().map_or(0, |k| k.tangent_dim()),
            FactorModel::MarkerCalibration => kinds.first().map_or(0, |k| k.tangent_dim()),
            FactorModel::RangeBearing { measured, .. } => measured.dim(),
            FactorModel::Linear { offset, .. } => offset.len(),
        }
    }
}

/// Raw factor energy `rᵀ Λ r`.
pub fn energy(residual: &DVector<f64>, information: &DMatrix<f64>) -> f64 {
    (residual.transpose() * information * residual)[(0, 0)]
}

/// Linearises `model` at `x` into `N⁻¹(-Jᵀ Λ̃ r, Jᵀ Λ̃ J) · N⁻¹(0, λ I)` over the
/// stacked tangent space of the slots flagged in `active`, with `Λ̃` the
/// robust-scaled information matrix.
pub fn linearize(
    model: &FactorModel,
    information: &DMatrix<f64>,
    x: &[&ManifoldPoint],
    active: &[bool],
    lambda_reg: Option<f64>,
) -> Result<Linearized, FactorError> {
    let eval = model.evaluate(x)?;
    let raw = energy(&eval.residual, information);
    let info = information * model.robust_weight(raw);
    let mut blocks = Vec::with_capacity(x.len());
    let mut dim = 0;
    for (j, &on) in eval.jacobians.iter().zip(active) {
        if on {
            blocks.push(Some((dim, j.ncols())));
            dim += j.ncols();
        } else {
            blocks.push(None);
        }
    }
    let mut jac = DMatrix::zeros(eval.residual.len(), dim);
    for (j, b) in eval.jacobians.iter().zip(&blocks) {
        if let Some((off, d)) = b {
            jac.view_mut((0, *off), (j.nrows(), *d)).copy_from(j);
        }
    }
    let jt_info = jac.transpose() * &info;
    let mut lambda = &jt_info * &jac;
    let eta = -(&jt_info * &eval.residual);
    if let Some(l) = lambda_reg {
        for i in 0..dim {
            lambda[(i, i)] += l;
        }
    }
    let lambda = crate::gaussian::symmetrize(lambda);
    Ok(Linearized {
        potential: CanonicalGaussian { eta, lambda },
        energy: raw,
        blocks,
    })
}
