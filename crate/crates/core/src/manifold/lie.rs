//! Closed-form SO(2)/SO(3)/SE(2)/SE(3) maps and Jacobians.
//!
//! Tangent vectors of the rigid-body groups are ordered translation first,
//! rotation second: `[rho; theta]` for SE(2) and `[rho; phi]` for SE(3).

use nalgebra::{Matrix2, Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector2, Vector3, Vector6};
use std::f64::consts::PI;

/// Below this angle the trigonometric coefficients switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-5;

pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; keep the half-open interval (-pi, pi].
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, k * phi.x, k * phi.y, k * phi.z))
}

/// Rotation vector of `q` and its angle in `[0, pi]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> (Vector3<f64>, f64) {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.vector().into_owned())
    } else {
        (q.w, q.vector().into_owned())
    };
    let vn = v.norm();
    let theta = 2.0 * vn.atan2(w);
    if vn < 1e-12 {
        // theta / sin(theta/2) -> 2 / w near the identity
        (v * (2.0 / w), theta)
    } else {
        (v * (theta / vn), theta)
    }
}

/// Geodesic angle of a rotation, in `[0, pi]`.
pub fn so3_angle(q: &UnitQuaternion<f64>) -> f64 {
    let q = q.quaternion();
    2.0 * q.vector().norm().atan2(q.w.abs())
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// The coupling block `Q(rho, phi)` of the SE(3) left Jacobian.
fn se3_q(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let p = skew(phi);
    let r = skew(rho);
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = theta2 * theta;
        (
            (theta - s) / t3,
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t3 * theta2),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

pub fn se3_exp(tau: &Vector6<f64>) -> (Vector3<f64>, UnitQuaternion<f64>) {
    let rho = tau.fixed_rows::<3>(0).into_owned();
    let phi = tau.fixed_rows::<3>(3).into_owned();
    (so3_left_jacobian(&phi) * rho, so3_exp(&phi))
}

pub fn se3_log(t: &Vector3<f64>, q: &UnitQuaternion<f64>) -> (Vector6<f64>, f64) {
    let (phi, theta) = so3_log(q);
    let rho = so3_left_jacobian_inv(&phi) * t;
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&rho);
    out.fixed_rows_mut::<3>(3).copy_from(&phi);
    (out, theta)
}

pub fn se3_adjoint(t: &Vector3<f64>, q: &UnitQuaternion<f64>) -> Matrix6<f64> {
    let r = q.to_rotation_matrix().into_inner();
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(t) * r));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad
}

fn se3_left_jacobian_inv(tau: &Vector6<f64>) -> Matrix6<f64> {
    let rho = tau.fixed_rows::<3>(0).into_owned();
    let phi = tau.fixed_rows::<3>(3).into_owned();
    let jinv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-jinv * q * jinv));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}

/// `Jr^-1(tau) = Jl^-1(-tau)`.
pub fn se3_right_jacobian_inv(tau: &Vector6<f64>) -> Matrix6<f64> {
    se3_left_jacobian_inv(&(-tau))
}

pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inv(&(-phi))
}

/// `V(theta)` of the SE(2) exponential.
pub fn se2_v(theta: f64) -> Matrix2<f64> {
    let (a, b) = if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta)
    };
    Matrix2::new(a, -b, b, a)
}

pub fn se2_exp(tau: &[f64]) -> (Vector2<f64>, f64) {
    let rho = Vector2::new(tau[0], tau[1]);
    (se2_v(tau[2]) * rho, wrap_angle(tau[2]))
}

pub fn se2_log(t: &Vector2<f64>, angle: f64) -> [f64; 3] {
    let theta = wrap_angle(angle);
    let v = se2_v(theta);
    let (a, b) = (v[(0, 0)], v[(1, 0)]);
    let det = a * a + b * b;
    let rho = Matrix2::new(a, b, -b, a) * t / det;
    [rho.x, rho.y, theta]
}

pub fn se2_adjoint(t: &Vector2<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, t.y, s, c, -t.x, 0.0, 0.0, 1.0)
}

pub fn se2_right_jacobian(tau: &[f64]) -> Matrix3<f64> {
    let (r1, r2, th) = (tau[0], tau[1], tau[2]);
    if th.abs() < SMALL_ANGLE {
        Matrix3::new(
            1.0 - th * th / 6.0,
            th / 2.0,
            -r2 / 2.0 + r1 * th / 6.0,
            -th / 2.0,
            1.0 - th * th / 6.0,
            r1 / 2.0 + r2 * th / 6.0,
            0.0,
            0.0,
            1.0,
        )
    } else {
        let (s, c) = th.sin_cos();
        let t2 = th * th;
        Matrix3::new(
            s / th,
            (1.0 - c) / th,
            (th * r1 - r2 + r2 * c - r1 * s) / t2,
            (c - 1.0) / th,
            s / th,
            (r1 + th * r2 - r1 * c - r2 * s) / t2,
            0.0,
            0.0,
            1.0,
        )
    }
}

pub fn se2_right_jacobian_inv(tau: &[f64]) -> Matrix3<f64> {
    // the upper-left block is a scaled rotation and never singular for |theta| < 2pi
    se2_right_jacobian(tau)
        .try_inverse()
        .expect("SE(2) right Jacobian is invertible on the principal branch")
}
