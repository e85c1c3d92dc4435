use super::lie;
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Deref, DerefMut};
use thiserror::Error;

/// SO(3) logarithms closer than this to a half turn are rejected.
pub const PI_BRANCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("tangent dimension {got} does not match manifold dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("manifold kind mismatch: {left} vs {right}")]
    KindMismatch { left: String, right: String },
    #[error("rotation angle {angle} is on the pi branch cut of the logarithm")]
    BranchAmbiguity { angle: f64 },
    #[error("{0} is not a group under composition")]
    NotAGroup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    So2,
    So3,
    Se2,
    Se3,
    Rn(usize),
    Composite(Vec<ManifoldKind>),
}

impl ManifoldKind {
    pub fn tangent_dim(&self) -> usize {
        match self {
            ManifoldKind::So2 => 1,
            ManifoldKind::So3 => 3,
            ManifoldKind::Se2 => 3,
            ManifoldKind::Se3 => 6,
            ManifoldKind::Rn(n) => *n,
            ManifoldKind::Composite(parts) => parts.iter().map(|k| k.tangent_dim()).sum(),
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldKind::So2 => write!(f, "SO2"),
            ManifoldKind::So3 => write!(f, "SO3"),
            ManifoldKind::Se2 => write!(f, "SE2"),
            ManifoldKind::Se3 => write!(f, "SE3"),
            ManifoldKind::Rn(n) => write!(f, "R{n}"),
            ManifoldKind::Composite(parts) => {
                write!(f, "<")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ">")
            }
        }
    }
}

/// Element of a tangent space (meters for translation blocks, radians for rotation blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(pub DVector<f64>);

impl TangentVector {
    pub fn zeros(dim: usize) -> Self {
        TangentVector(DVector::zeros(dim))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        TangentVector(DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for TangentVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl DerefMut for TangentVector {
    fn deref_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }
}

impl From<DVector<f64>> for TangentVector {
    fn from(v: DVector<f64>) -> Self {
        TangentVector(v)
    }
}

/// A point on one of the supported manifolds.
///
/// SO(2) angles are kept wrapped to `(-pi, pi]`; SO(3) rotations are unit
/// quaternions, renormalised after every composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PointRepr", try_from = "PointRepr")]
pub enum ManifoldPoint {
    So2(f64),
    So3(UnitQuaternion<f64>),
    Se2 {
        translation: Vector2<f64>,
        angle: f64,
    },
    Se3 {
        translation: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
    },
    Rn(DVector<f64>),
    Composite(Vec<ManifoldPoint>),
}

fn check_dim(kind: &ManifoldKind, tau: &[f64]) -> Result<(), ManifoldError> {
    let expected = kind.tangent_dim();
    if tau.len() != expected {
        return Err(ManifoldError::DimensionMismatch {
            expected,
            got: tau.len(),
        });
    }
    Ok(())
}

fn mismatch(a: &ManifoldPoint, b: &ManifoldPoint) -> ManifoldError {
    ManifoldError::KindMismatch {
        left: a.kind().to_string(),
        right: b.kind().to_string(),
    }
}

/// Exponential map from the tangent space at the identity of `kind`.
pub fn exp(kind: &ManifoldKind, tau: &[f64]) -> Result<ManifoldPoint, ManifoldError> {
    check_dim(kind, tau)?;
    Ok(match kind {
        ManifoldKind::So2 => ManifoldPoint::So2(lie::wrap_angle(tau[0])),
        ManifoldKind::So3 => ManifoldPoint::So3(lie::so3_exp(&Vector3::from_column_slice(tau))),
        ManifoldKind::Se2 => {
            let (translation, angle) = lie::se2_exp(tau);
            ManifoldPoint::Se2 { translation, angle }
        }
        ManifoldKind::Se3 => {
            let (translation, rotation) = lie::se3_exp(&Vector6::from_column_slice(tau));
            ManifoldPoint::Se3 {
                translation,
                rotation,
            }
        }
        ManifoldKind::Rn(_) => ManifoldPoint::Rn(DVector::from_column_slice(tau)),
        ManifoldKind::Composite(parts) => {
            let mut offset = 0;
            let mut out = Vec::with_capacity(parts.len());
            for p in parts {
                let d = p.tangent_dim();
                out.push(exp(p, &tau[offset..offset + d])?);
                offset += d;
            }
            ManifoldPoint::Composite(out)
        }
    })
}

impl ManifoldPoint {
    pub fn identity(kind: &ManifoldKind) -> ManifoldPoint {
        match kind {
            ManifoldKind::So2 => ManifoldPoint::So2(0.0),
            ManifoldKind::So3 => ManifoldPoint::So3(UnitQuaternion::identity()),
            ManifoldKind::Se2 => ManifoldPoint::Se2 {
                translation: Vector2::zeros(),
                angle: 0.0,
            },
            ManifoldKind::Se3 => ManifoldPoint::Se3 {
                translation: Vector3::zeros(),
                rotation: UnitQuaternion::identity(),
            },
            ManifoldKind::Rn(n) => ManifoldPoint::Rn(DVector::zeros(*n)),
            ManifoldKind::Composite(parts) => {
                ManifoldPoint::Composite(parts.iter().map(ManifoldPoint::identity).collect())
            }
        }
    }

    pub fn so2(angle: f64) -> Self {
        ManifoldPoint::So2(lie::wrap_angle(angle))
    }

    pub fn se2(x: f64, y: f64, angle: f64) -> Self {
        ManifoldPoint::Se2 {
            translation: Vector2::new(x, y),
            angle: lie::wrap_angle(angle),
        }
    }

    pub fn se3(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        ManifoldPoint::Se3 {
            translation,
            rotation,
        }
    }

    pub fn rn(values: &[f64]) -> Self {
        ManifoldPoint::Rn(DVector::from_column_slice(values))
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            ManifoldPoint::So2(_) => ManifoldKind::So2,
            ManifoldPoint::So3(_) => ManifoldKind::So3,
            ManifoldPoint::Se2 { .. } => ManifoldKind::Se2,
            ManifoldPoint::Se3 { .. } => ManifoldKind::Se3,
            ManifoldPoint::Rn(v) => ManifoldKind::Rn(v.len()),
            ManifoldPoint::Composite(parts) => {
                ManifoldKind::Composite(parts.iter().map(|p| p.kind()).collect())
            }
        }
    }

    pub fn tangent_dim(&self) -> usize {
        match self {
            ManifoldPoint::So2(_) => 1,
            ManifoldPoint::So3(_) => 3,
            ManifoldPoint::Se2 { .. } => 3,
            ManifoldPoint::Se3 { .. } => 6,
            ManifoldPoint::Rn(v) => v.len(),
            ManifoldPoint::Composite(parts) => parts.iter().map(|p| p.tangent_dim()).sum(),
        }
    }

    fn same_kind(&self, other: &ManifoldPoint) -> bool {
        match (self, other) {
            (ManifoldPoint::So2(_), ManifoldPoint::So2(_))
            | (ManifoldPoint::So3(_), ManifoldPoint::So3(_))
            | (ManifoldPoint::Se2 { .. }, ManifoldPoint::Se2 { .. })
            | (ManifoldPoint::Se3 { .. }, ManifoldPoint::Se3 { .. }) => true,
            (ManifoldPoint::Rn(a), ManifoldPoint::Rn(b)) => a.len() == b.len(),
            (ManifoldPoint::Composite(a), ManifoldPoint::Composite(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_kind(y))
            }
            _ => false,
        }
    }

    /// Logarithm to the tangent space at the identity.
    pub fn log(&self) -> Result<TangentVector, ManifoldError> {
        Ok(TangentVector(match self {
            ManifoldPoint::So2(a) => DVector::from_element(1, lie::wrap_angle(*a)),
            ManifoldPoint::So3(q) => {
                let (phi, theta) = lie::so3_log(q);
                check_branch(theta)?;
                DVector::from_column_slice(phi.as_slice())
            }
            ManifoldPoint::Se2 { translation, angle } => {
                DVector::from_column_slice(&lie::se2_log(translation, *angle))
            }
            ManifoldPoint::Se3 {
                translation,
                rotation,
            } => {
                let (tau, theta) = lie::se3_log(translation, rotation);
                check_branch(theta)?;
                DVector::from_column_slice(tau.as_slice())
            }
            ManifoldPoint::Rn(v) => v.clone(),
            ManifoldPoint::Composite(parts) => {
                let mut out = Vec::with_capacity(self.tangent_dim());
                for p in parts {
                    out.extend_from_slice(p.log()?.as_slice());
                }
                DVector::from_vec(out)
            }
        }))
    }

    /// `self ∘ other`. Only defined for the four rotation/rigid-body groups.
    pub fn compose(&self, other: &ManifoldPoint) -> Result<ManifoldPoint, ManifoldError> {
        match (self, other) {
            (ManifoldPoint::So2(a), ManifoldPoint::So2(b)) => Ok(ManifoldPoint::so2(a + b)),
            (ManifoldPoint::So3(a), ManifoldPoint::So3(b)) => {
                Ok(ManifoldPoint::So3(renormalize(a * b)))
            }
            (
                ManifoldPoint::Se2 {
                    translation: ta,
                    angle: aa,
                },
                ManifoldPoint::Se2 {
                    translation: tb,
                    angle: ab,
                },
            ) => Ok(ManifoldPoint::Se2 {
                translation: ta + rot2(*aa) * tb,
                angle: lie::wrap_angle(aa + ab),
            }),
            (
                ManifoldPoint::Se3 {
                    translation: ta,
                    rotation: ra,
                },
                ManifoldPoint::Se3 {
                    translation: tb,
                    rotation: rb,
                },
            ) => Ok(ManifoldPoint::Se3 {
                translation: ta + ra * tb,
                rotation: renormalize(ra * rb),
            }),
            (ManifoldPoint::Rn(_), _) | (ManifoldPoint::Composite(_), _) => {
                Err(ManifoldError::NotAGroup(self.kind().to_string()))
            }
            _ => Err(mismatch(self, other)),
        }
    }

    pub fn inverse(&self) -> Result<ManifoldPoint, ManifoldError> {
        match self {
            ManifoldPoint::So2(a) => Ok(ManifoldPoint::so2(-a)),
            ManifoldPoint::So3(q) => Ok(ManifoldPoint::So3(q.inverse())),
            ManifoldPoint::Se2 { translation, angle } => Ok(ManifoldPoint::Se2 {
                translation: -(rot2(-angle) * translation),
                angle: lie::wrap_angle(-angle),
            }),
            ManifoldPoint::Se3 {
                translation,
                rotation,
            } => {
                let inv = rotation.inverse();
                Ok(ManifoldPoint::Se3 {
                    translation: -(inv * translation),
                    rotation: inv,
                })
            }
            ManifoldPoint::Rn(_) | ManifoldPoint::Composite(_) => {
                Err(ManifoldError::NotAGroup(self.kind().to_string()))
            }
        }
    }

    /// `self ⊕ tau`: right-composition with `Exp(tau)`; addition on R^n; blockwise on composites.
    pub fn oplus(&self, tau: &[f64]) -> Result<ManifoldPoint, ManifoldError> {
        check_dim(&self.kind(), tau)?;
        match self {
            ManifoldPoint::Rn(v) => Ok(ManifoldPoint::Rn(v + DVector::from_column_slice(tau))),
            ManifoldPoint::Composite(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let d = p.tangent_dim();
                    out.push(p.oplus(&tau[offset..offset + d])?);
                    offset += d;
                }
                Ok(ManifoldPoint::Composite(out))
            }
            _ => self.compose(&exp(&self.kind(), tau)?),
        }
    }

    /// `self ⊖ other = Log(other⁻¹ ∘ self)`; subtraction on R^n; blockwise on composites.
    pub fn ominus(&self, other: &ManifoldPoint) -> Result<TangentVector, ManifoldError> {
        if !self.same_kind(other) {
            return Err(mismatch(self, other));
        }
        match (self, other) {
            (ManifoldPoint::So2(a), ManifoldPoint::So2(b)) => {
                Ok(TangentVector(DVector::from_element(1, lie::wrap_angle(a - b))))
            }
            (ManifoldPoint::Rn(a), ManifoldPoint::Rn(b)) => Ok(TangentVector(a - b)),
            (ManifoldPoint::Composite(a), ManifoldPoint::Composite(b)) => {
                let mut out = Vec::with_capacity(self.tangent_dim());
                for (x, y) in a.iter().zip(b) {
                    out.extend_from_slice(x.ominus(y)?.as_slice());
                }
                Ok(TangentVector(DVector::from_vec(out)))
            }
            _ => other.inverse()?.compose(self)?.log(),
        }
    }

    /// Applies the point as a transformation to a position in its ambient space.
    pub fn transform(&self, p: &DVector<f64>) -> Result<DVector<f64>, ManifoldError> {
        match self {
            ManifoldPoint::Se3 {
                translation,
                rotation,
            } if p.len() == 3 => {
                let v = rotation * Vector3::new(p[0], p[1], p[2]) + translation;
                Ok(DVector::from_column_slice(v.as_slice()))
            }
            ManifoldPoint::Se2 { translation, angle } if p.len() == 2 => {
                let v = rot2(*angle) * Vector2::new(p[0], p[1]) + translation;
                Ok(DVector::from_column_slice(v.as_slice()))
            }
            _ => Err(ManifoldError::KindMismatch {
                left: self.kind().to_string(),
                right: format!("R{}", p.len()),
            }),
        }
    }

    /// Translation part of a rigid-body pose, or the vector itself for R^n.
    pub fn translation(&self) -> Option<DVector<f64>> {
        match self {
            ManifoldPoint::Se2 { translation, .. } => {
                Some(DVector::from_column_slice(translation.as_slice()))
            }
            ManifoldPoint::Se3 { translation, .. } => {
                Some(DVector::from_column_slice(translation.as_slice()))
            }
            ManifoldPoint::Rn(v) => Some(v.clone()),
            _ => None,
        }
    }

    /// Rotation matrix of a pose or rotation (2x2 or 3x3).
    pub fn rotation_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            ManifoldPoint::So2(a) | ManifoldPoint::Se2 { angle: a, .. } => {
                let r = rot2(*a);
                Some(DMatrix::from_column_slice(2, 2, r.as_slice()))
            }
            ManifoldPoint::So3(q) | ManifoldPoint::Se3 { rotation: q, .. } => {
                let r = q.to_rotation_matrix().into_inner();
                Some(DMatrix::from_column_slice(3, 3, r.as_slice()))
            }
            _ => None,
        }
    }

    /// Geodesic angle between the rotation parts of two points, radians.
    pub fn rotation_distance(&self, other: &ManifoldPoint) -> Option<f64> {
        match (self, other) {
            (ManifoldPoint::So2(a), ManifoldPoint::So2(b))
            | (ManifoldPoint::Se2 { angle: a, .. }, ManifoldPoint::Se2 { angle: b, .. }) => {
                Some(lie::wrap_angle(a - b).abs())
            }
            (ManifoldPoint::So3(a), ManifoldPoint::So3(b))
            | (ManifoldPoint::Se3 { rotation: a, .. }, ManifoldPoint::Se3 { rotation: b, .. }) => {
                Some(lie::so3_angle(&(a.inverse() * b)))
            }
            _ => None,
        }
    }

    /// Adjoint matrix acting on tangent vectors: `x ∘ Exp(tau) = Exp(Ad_x tau) ∘ x`.
    pub fn adjoint(&self) -> DMatrix<f64> {
        match self {
            ManifoldPoint::So2(_) => DMatrix::identity(1, 1),
            ManifoldPoint::So3(q) => {
                let r = q.to_rotation_matrix().into_inner();
                DMatrix::from_column_slice(3, 3, r.as_slice())
            }
            ManifoldPoint::Se2 { translation, angle } => {
                let m = lie::se2_adjoint(translation, *angle);
                DMatrix::from_column_slice(3, 3, m.as_slice())
            }
            ManifoldPoint::Se3 {
                translation,
                rotation,
            } => {
                let m = lie::se3_adjoint(translation, rotation);
                DMatrix::from_column_slice(6, 6, m.as_slice())
            }
            _ => {
                let d = self.tangent_dim();
                DMatrix::identity(d, d)
            }
        }
    }

    /// Inverse right Jacobian `Jr⁻¹(tau)` of this point's manifold, so that
    /// `Log(X ∘ Exp(d)) ≈ Log(X) + Jr⁻¹(Log X) d`.
    pub fn right_jacobian_inv(kind: &ManifoldKind, tau: &[f64]) -> DMatrix<f64> {
        match kind {
            ManifoldKind::So3 => {
                let m = lie::so3_right_jacobian_inv(&Vector3::from_column_slice(tau));
                DMatrix::from_column_slice(3, 3, m.as_slice())
            }
            ManifoldKind::Se2 => {
                let m = lie::se2_right_jacobian_inv(tau);
                DMatrix::from_column_slice(3, 3, m.as_slice())
            }
            ManifoldKind::Se3 => {
                let m = lie::se3_right_jacobian_inv(&Vector6::from_column_slice(tau));
                DMatrix::from_column_slice(6, 6, m.as_slice())
            }
            ManifoldKind::Composite(parts) => {
                let n = kind.tangent_dim();
                let mut out = DMatrix::zeros(n, n);
                let mut offset = 0;
                for p in parts {
                    let d = p.tangent_dim();
                    let block = Self::right_jacobian_inv(p, &tau[offset..offset + d]);
                    out.view_mut((offset, offset), (d, d)).copy_from(&block);
                    offset += d;
                }
                out
            }
            _ => {
                let d = kind.tangent_dim();
                DMatrix::identity(d, d)
            }
        }
    }

    /// Largest absolute coordinate difference between two points of the same kind,
    /// comparing quaternions up to sign.
    pub fn max_abs_diff(&self, other: &ManifoldPoint) -> f64 {
        match (self, other) {
            (ManifoldPoint::So2(a), ManifoldPoint::So2(b)) => lie::wrap_angle(a - b).abs(),
            (ManifoldPoint::So3(a), ManifoldPoint::So3(b)) => quat_diff(a, b),
            (
                ManifoldPoint::Se2 {
                    translation: ta,
                    angle: aa,
                },
                ManifoldPoint::Se2 {
                    translation: tb,
                    angle: ab,
                },
            ) => (ta - tb).amax().max(lie::wrap_angle(aa - ab).abs()),
            (
                ManifoldPoint::Se3 {
                    translation: ta,
                    rotation: ra,
                },
                ManifoldPoint::Se3 {
                    translation: tb,
                    rotation: rb,
                },
            ) => (ta - tb).amax().max(quat_diff(ra, rb)),
            (ManifoldPoint::Rn(a), ManifoldPoint::Rn(b)) if a.len() == b.len() => {
                if a.is_empty() {
                    0.0
                } else {
                    (a - b).amax()
                }
            }
            (ManifoldPoint::Composite(a), ManifoldPoint::Composite(b)) if a.len() == b.len() => a
                .iter()
                .zip(b)
                .map(|(x, y)| x.max_abs_diff(y))
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }
}

fn check_branch(theta: f64) -> Result<(), ManifoldError> {
    if PI - theta < PI_BRANCH_TOL {
        Err(ManifoldError::BranchAmbiguity { angle: theta })
    } else {
        Ok(())
    }
}

fn quat_diff(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let d1 = (a.coords - b.coords).amax();
    let d2 = (a.coords + b.coords).amax();
    d1.min(d2)
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

fn rot2(angle: f64) -> nalgebra::Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    nalgebra::Matrix2::new(c, -s, s, c)
}

/// Central-difference Jacobian of `f` in the tangent space at `x`.
///
/// Column `i` is `(f(x ⊕ eps·eᵢ) ⊖ f(x ⊕ -eps·eᵢ)) / (2 eps)`, with `⊖` taken on
/// the output manifold (plain subtraction when `f` returns `Rn`).
pub fn numerical_jacobian<F>(
    f: F,
    x: &ManifoldPoint,
    eps: f64,
) -> Result<DMatrix<f64>, ManifoldError>
where
    F: Fn(&ManifoldPoint) -> ManifoldPoint,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let n = x.tangent_dim();
    let mut cols = Vec::with_capacity(n);
    let mut step = vec![0.0; n];
    for i in 0..n {
        step[i] = eps;
        let plus = f(&x.oplus(&step)?);
        step[i] = -eps;
        let minus = f(&x.oplus(&step)?);
        step[i] = 0.0;
        cols.push(plus.ominus(&minus)?.0 / (2.0 * eps));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(m, n, |r, c| cols[c][r]))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PointRepr {
    So2 { angle: f64 },
    So3 { quat_wxyz: [f64; 4] },
    Se2 { t: [f64; 2], angle: f64 },
    Se3 { t: [f64; 3], quat_wxyz: [f64; 4] },
    Rn { values: Vec<f64> },
    Composite { components: Vec<ManifoldPoint> },
}

fn quat_to_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

fn quat_from_array(a: [f64; 4]) -> Result<UnitQuaternion<f64>, String> {
    let q = nalgebra::Quaternion::new(a[0], a[1], a[2], a[3]);
    if !(q.norm() > 0.0) {
        return Err("zero quaternion".into());
    }
    Ok(UnitQuaternion::new_normalize(q))
}

impl From<ManifoldPoint> for PointRepr {
    fn from(p: ManifoldPoint) -> Self {
        match p {
            ManifoldPoint::So2(angle) => PointRepr::So2 { angle },
            ManifoldPoint::So3(q) => PointRepr::So3 {
                quat_wxyz: quat_to_array(&q),
            },
            ManifoldPoint::Se2 { translation, angle } => PointRepr::Se2 {
                t: [translation.x, translation.y],
                angle,
            },
            ManifoldPoint::Se3 {
                translation,
                rotation,
            } => PointRepr::Se3 {
                t: [translation.x, translation.y, translation.z],
                quat_wxyz: quat_to_array(&rotation),
            },
            ManifoldPoint::Rn(v) => PointRepr::Rn {
                values: v.iter().copied().collect(),
            },
            ManifoldPoint::Composite(components) => PointRepr::Composite { components },
        }
    }
}

impl TryFrom<PointRepr> for ManifoldPoint {
    type Error = String;
    fn try_from(r: PointRepr) -> Result<Self, String> {
        Ok(match r {
            PointRepr::So2 { angle } => ManifoldPoint::so2(angle),
            PointRepr::So3 { quat_wxyz } => ManifoldPoint::So3(quat_from_array(quat_wxyz)?),
            PointRepr::Se2 { t, angle } => ManifoldPoint::se2(t[0], t[1], angle),
            PointRepr::Se3 { t, quat_wxyz } => {
                ManifoldPoint::se3(Vector3::from(t), quat_from_array(quat_wxyz)?)
            }
            PointRepr::Rn { values } => ManifoldPoint::Rn(DVector::from_vec(values)),
            PointRepr::Composite { components } => ManifoldPoint::Composite(components),
        })
    }
}
