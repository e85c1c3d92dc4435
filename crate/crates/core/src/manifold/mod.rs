//! Lie-group and composite-manifold arithmetic.
//!
//! All state in the estimator lives on one of five manifolds (SO(2), SO(3),
//! SE(2), SE(3), R^n) or on an ordered product of them. Points are immutable
//! values; every operation returns a new point.
//!
//! Conventions used throughout the crate:
//!
//! * `x ⊕ tau = x ∘ Exp(tau)` (right perturbation) and `y ⊖ x = Log(x⁻¹ ∘ y)`.
//! * Tangent vectors of SE(2)/SE(3) are ordered translation first, then rotation.
//! * SO(2) angles and SO(2) residuals live in `(-pi, pi]`.
//! * SO(3) logarithms refuse rotations within [`PI_BRANCH_TOL`] of `pi`.

pub(crate) mod lie;
mod point;

pub use lie::wrap_angle;
pub use point::{
    exp, numerical_jacobian, ManifoldError, ManifoldKind, ManifoldPoint, TangentVector,
    PI_BRANCH_TOL,
};
