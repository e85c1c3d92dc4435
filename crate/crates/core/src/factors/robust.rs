use crate::gaussian::CanonicalGaussian;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Per-factor adaptive damping: a zero-mean prior `N⁻¹(0, λ I)` over the
/// factor's stacked tangent space whose strength grows when the local energy
/// rises and shrinks otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveReg {
    pub lambda_reg: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub eps_lambda: f64,
}

impl Default for AdaptiveReg {
    fn default() -> Self {
        AdaptiveReg {
            lambda_reg: 10.0,
            lambda_up: 11.0,
            lambda_down: 9.0,
            eps_lambda: 1e-4,
        }
    }
}

impl AdaptiveReg {
    /// Multiplies by `lambda_up` iff the energy rose by strictly more than `eps_lambda`,
    /// otherwise divides by `lambda_down`.
    pub fn updated(&self, e_curr: f64, e_prev: f64) -> AdaptiveReg {
        let lambda_reg = if e_curr - e_prev > self.eps_lambda {
            self.lambda_reg * self.lambda_up
        } else {
            self.lambda_reg / self.lambda_down
        };
        AdaptiveReg {
            lambda_reg,
            ..*self
        }
    }

    pub fn apply(&self, potential: &CanonicalGaussian) -> CanonicalGaussian {
        apply_regularizer(potential, self.lambda_reg)
    }
}

pub fn update_adaptive_reg(reg: &AdaptiveReg, e_curr: f64, e_prev: f64) -> AdaptiveReg {
    reg.updated(e_curr, e_prev)
}

/// Adds `lambda_reg · I` to the information matrix; `eta` is untouched.
pub fn apply_regularizer(potential: &CanonicalGaussian, lambda_reg: f64) -> CanonicalGaussian {
    let n = potential.dim();
    CanonicalGaussian {
        eta: potential.eta.clone(),
        lambda: &potential.lambda + DMatrix::identity(n, n) * lambda_reg,
    }
}

/// Dynamic covariance scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcsConfig {
    pub phi: f64,
}

impl Default for DcsConfig {
    fn default() -> Self {
        DcsConfig { phi: 10.0 }
    }
}

/// `s = min(1, 2Φ / (Φ + E))`; the information matrix is scaled by `s²`.
pub fn dcs_scale(energy: f64, cfg: &DcsConfig) -> f64 {
    (2.0 * cfg.phi / (cfg.phi + energy.max(0.0))).min(1.0)
}
