//! Gaussians in canonical (information) form.
//!
//! A [`CanonicalGaussian`] stores `eta = Λμ` and `Λ = Σ⁻¹`. Products and
//! quotients are additive; marginalisation is a Schur complement. Messages may
//! carry indefinite information matrices, only beliefs converted to moments
//! must be positive definite.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussianError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("eliminated block is not positive definite")]
    SingularMarginalization,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GaussianRepr", from = "GaussianRepr")]
pub struct CanonicalGaussian {
    pub eta: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

impl CanonicalGaussian {
    pub fn new(eta: DVector<f64>, lambda: DMatrix<f64>) -> Result<Self, GaussianError> {
        if lambda.nrows() != eta.len() || lambda.ncols() != eta.len() {
            return Err(GaussianError::DimensionMismatch(eta.len(), lambda.nrows()));
        }
        Ok(CanonicalGaussian { eta, lambda })
    }

    /// The zero-information Gaussian; identity element of [`product`](Self::product).
    pub fn zeros(dim: usize) -> Self {
        CanonicalGaussian {
            eta: DVector::zeros(dim),
            lambda: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn product(&self, other: &CanonicalGaussian) -> Result<CanonicalGaussian, GaussianError> {
        self.check_dim(other)?;
        Ok(CanonicalGaussian {
            eta: &self.eta + &other.eta,
            lambda: &self.lambda + &other.lambda,
        })
    }

    pub fn quotient(&self, other: &CanonicalGaussian) -> Result<CanonicalGaussian, GaussianError> {
        self.check_dim(other)?;
        Ok(CanonicalGaussian {
            eta: &self.eta - &other.eta,
            lambda: &self.lambda - &other.lambda,
        })
    }

    pub fn product_assign(&mut self, other: &CanonicalGaussian) {
        debug_assert_eq!(self.dim(), other.dim());
        self.eta += &other.eta;
        self.lambda += &other.lambda;
    }

    fn check_dim(&self, other: &CanonicalGaussian) -> Result<(), GaussianError> {
        if self.dim() != other.dim() {
            return Err(GaussianError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(())
    }

    /// Marginal over the coordinates in `keep` (in the given order).
    pub fn marginalize(&self, keep: &[usize]) -> Result<CanonicalGaussian, GaussianError> {
        let n = self.dim();
        if keep.is_empty() {
            return Err(GaussianError::InvalidIndexSet("empty".into()));
        }
        let mut kept = vec![false; n];
        for &k in keep {
            if k >= n || kept[k] {
                return Err(GaussianError::InvalidIndexSet(format!(
                    "{keep:?} for dimension {n}"
                )));
            }
            kept[k] = true;
        }
        let elim: Vec<usize> = (0..n).filter(|i| !kept[*i]).collect();
        let eta_k = DVector::from_fn(keep.len(), |i, _| self.eta[keep[i]]);
        let lam_kk = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.lambda[(keep[i], keep[j])]);
        if elim.is_empty() {
            return Ok(CanonicalGaussian {
                eta: eta_k,
                lambda: symmetrize(lam_kk),
            });
        }
        let eta_e = DVector::from_fn(elim.len(), |i, _| self.eta[elim[i]]);
        let lam_ke = DMatrix::from_fn(keep.len(), elim.len(), |i, j| self.lambda[(keep[i], elim[j])]);
        let lam_ee = DMatrix::from_fn(elim.len(), elim.len(), |i, j| self.lambda[(elim[i], elim[j])]);
        let (eta, lambda) = schur(eta_k, lam_kk, eta_e, lam_ke, lam_ee)?;
        Ok(CanonicalGaussian { eta, lambda })
    }

    /// Marginal over the contiguous block `[start, start + len)`.
    pub fn marginalize_block(&self, start: usize, len: usize) -> Result<CanonicalGaussian, GaussianError> {
        let keep: Vec<usize> = (start..start + len).collect();
        self.marginalize(&keep)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.dim() > 0 && Cholesky::new(self.lambda.clone()).is_some()
    }

    /// Mean `Λ⁻¹η`, requires `Λ` positive definite.
    pub fn mean(&self) -> Result<DVector<f64>, GaussianError> {
        let chol = Cholesky::new(self.lambda.clone()).ok_or(GaussianError::NotPositiveDefinite)?;
        Ok(chol.solve(&self.eta))
    }

    pub fn to_moments(&self) -> Result<(DVector<f64>, DMatrix<f64>), GaussianError> {
        let chol = Cholesky::new(self.lambda.clone()).ok_or(GaussianError::NotPositiveDefinite)?;
        let mean = chol.solve(&self.eta);
        Ok((mean, symmetrize(chol.inverse())))
    }

    pub fn from_moments(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self, GaussianError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(GaussianError::DimensionMismatch(mean.len(), cov.nrows()));
        }
        let chol = Cholesky::new(cov.clone()).ok_or(GaussianError::NotPositiveDefinite)?;
        let lambda = symmetrize(chol.inverse());
        let eta = &lambda * mean;
        Ok(CanonicalGaussian { eta, lambda })
    }

    /// Re-expresses the Gaussian in coordinates shifted by `d`, i.e. for
    /// `x_old = x_new + d`: `eta' = eta - Λ d`.
    pub fn shifted(&self, d: &DVector<f64>) -> CanonicalGaussian {
        CanonicalGaussian {
            eta: &self.eta - &self.lambda * d,
            lambda: self.lambda.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &CanonicalGaussian) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        if self.dim() == 0 {
            return 0.0;
        }
        (&self.eta - &other.eta).amax().max((&self.lambda - &other.lambda).amax())
    }
}

fn schur(
    eta_k: DVector<f64>,
    lam_kk: DMatrix<f64>,
    eta_e: DVector<f64>,
    lam_ke: DMatrix<f64>,
    lam_ee: DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), GaussianError> {
    let chol = Cholesky::new(lam_ee).ok_or(GaussianError::SingularMarginalization)?;
    // X = Λ_ee⁻¹ Λ_ek, y = Λ_ee⁻¹ η_e
    let x = chol.solve(&lam_ke.transpose());
    let y = chol.solve(&eta_e);
    let eta = eta_k - &lam_ke * y;
    let lambda = lam_kk - &lam_ke * x;
    if !eta.iter().all(|v| v.is_finite()) || !lambda.iter().all(|v| v.is_finite()) {
        return Err(GaussianError::SingularMarginalization);
    }
    Ok((eta, symmetrize(lambda)))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    eta: Vec<f64>,
    /// row-major
    lambda: Vec<Vec<f64>>,
}

impl From<CanonicalGaussian> for GaussianRepr {
    fn from(g: CanonicalGaussian) -> Self {
        GaussianRepr {
            eta: g.eta.iter().copied().collect(),
            lambda: g
                .lambda
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl From<GaussianRepr> for CanonicalGaussian {
    fn from(r: GaussianRepr) -> Self {
        let n = r.eta.len();
        CanonicalGaussian {
            eta: DVector::from_vec(r.eta),
            lambda: DMatrix::from_fn(n, n, |i, j| {
                r.lambda.get(i).and_then(|row| row.get(j)).copied().unwrap_or(0.0)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(eta: &[f64], lambda: &[f64]) -> CanonicalGaussian {
        let n = eta.len();
        CanonicalGaussian::new(
            DVector::from_column_slice(eta),
            DMatrix::from_row_slice(n, n, lambda),
        )
        .unwrap()
    }

    /// Covariance-form marginal: invert, select block, re-invert.
    fn dense_marginal(joint: &CanonicalGaussian, keep: &[usize]) -> CanonicalGaussian {
        let cov = joint.lambda.clone().try_inverse().unwrap();
        let mean = &cov * &joint.eta;
        let m = DVector::from_fn(keep.len(), |i, _| mean[keep[i]]);
        let c = DMatrix::from_fn(keep.len(), keep.len(), |i, j| cov[(keep[i], keep[j])]);
        let lam = c.try_inverse().unwrap();
        CanonicalGaussian {
            eta: &lam * m,
            lambda: lam,
        }
    }

    #[test]
    fn product_of_unit_gaussians() {
        let a = g(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let p = a.product(&a).unwrap();
        assert_eq!(p, g(&[0.0, 0.0], &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(a.product(&CanonicalGaussian::zeros(2)).unwrap(), a);
        assert_eq!(a.quotient(&CanonicalGaussian::zeros(2)).unwrap(), a);
        assert!(matches!(
            a.product(&CanonicalGaussian::zeros(3)),
            Err(GaussianError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn product_matches_bayes_fusion() {
        // covariance-form fusion: Σ = (Σa⁻¹ + Σb⁻¹)⁻¹, μ = Σ(Σa⁻¹μa + Σb⁻¹μb)
        let ma = DVector::from_column_slice(&[1.0, -2.0]);
        let ca = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mb = DVector::from_column_slice(&[0.5, 0.5]);
        let cb = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 1.5]);
        let a = CanonicalGaussian::from_moments(&ma, &ca).unwrap();
        let b = CanonicalGaussian::from_moments(&mb, &cb).unwrap();
        let (m, c) = a.product(&b).unwrap().to_moments().unwrap();
        let ia = ca.try_inverse().unwrap();
        let ib = cb.try_inverse().unwrap();
        let c_ref = (&ia + &ib).try_inverse().unwrap();
        let m_ref = &c_ref * (&ia * &ma + &ib * &mb);
        assert!((m - m_ref).amax() < 1e-10);
        assert!((c - c_ref).amax() < 1e-10);
    }

    #[test]
    fn quotient_undoes_product() {
        let a = g(&[1.0, 2.0], &[3.0, 1.0, 1.0, 2.0]);
        let b = g(&[-0.5, 0.25], &[1.0, -0.5, -0.5, 4.0]);
        let back = a.product(&b).unwrap().quotient(&b).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn marginal_of_correlated_pair() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mean = DVector::from_column_slice(&[1.0, 2.0]);
        let joint = CanonicalGaussian::from_moments(&mean, &cov).unwrap();
        let m = joint.marginalize(&[0]).unwrap();
        let (mu, var) = m.to_moments().unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-12);
        assert!((var[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn block_diagonal_marginal_keeps_block() {
        let joint = g(
            &[1.0, 2.0, 3.0],
            &[2.0, 0.5, 0.0, 0.5, 3.0, 0.0, 0.0, 0.0, 4.0],
        );
        let m = joint.marginalize(&[0, 1]).unwrap();
        assert_eq!(m, g(&[1.0, 2.0], &[2.0, 0.5, 0.5, 3.0]));
    }

    #[test]
    fn singular_elimination_is_an_error() {
        let joint = g(&[1.0, 2.0], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            joint.marginalize(&[0]),
            Err(GaussianError::SingularMarginalization)
        );
        assert!(matches!(
            joint.marginalize(&[]),
            Err(GaussianError::InvalidIndexSet(_))
        ));
    }

    #[test]
    fn moments_of_unit_and_singular() {
        let (m, c) = g(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).to_moments().unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0]);
        assert_eq!(c, DMatrix::identity(2, 2));
        assert_eq!(
            g(&[0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).to_moments(),
            Err(GaussianError::NotPositiveDefinite)
        );
    }

    #[test]
    fn serde_layout_is_row_major() {
        let a = g(&[1.0, 2.0], &[3.0, 1.0, 1.0, 2.0]);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"eta":[1.0,2.0],"lambda":[[3.0,1.0],[1.0,2.0]]}"#);
        let back: CanonicalGaussian = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
    }

    fn random_pd(n: usize, seed: Vec<f64>) -> CanonicalGaussian {
        let a = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        let lambda = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let eta = DVector::from_fn(n, |i, _| seed[(i * 7 + 3) % seed.len()]);
        CanonicalGaussian { eta, lambda }
    }

    proptest! {
        #[test]
        fn marginalize_matches_covariance_form(
            n in 2usize..=12,
            seed in prop::collection::vec(-1.0f64..1.0, 144),
            mask in prop::collection::vec(any::<bool>(), 12),
        ) {
            let joint = random_pd(n, seed);
            let mut keep: Vec<usize> = (0..n).filter(|i| mask[*i]).collect();
            if keep.is_empty() { keep.push(0); }
            let m = joint.marginalize(&keep).unwrap();
            let r = dense_marginal(&joint, &keep);
            let scale = r.lambda.amax().max(r.eta.amax()).max(1.0);
            prop_assert!(m.max_abs_diff(&r) / scale < 1e-8);
        }

        #[test]
        fn nested_marginalization(
            n in 3usize..=10,
            seed in prop::collection::vec(-1.0f64..1.0, 100),
        ) {
            let joint = random_pd(n, seed);
            let ab: Vec<usize> = (0..n - 1).collect();
            let a: Vec<usize> = (0..n / 2).collect();
            let two_step = joint.marginalize(&ab).unwrap().marginalize(&a).unwrap();
            let one_step = joint.marginalize(&a).unwrap();
            prop_assert!(two_step.max_abs_diff(&one_step) < 1e-10 * one_step.lambda.amax().max(1.0));
        }

        #[test]
        fn moments_roundtrip(n in 1usize..=8, seed in prop::collection::vec(-1.0f64..1.0, 64)) {
            let gauss = random_pd(n, seed);
            let (m, c) = gauss.to_moments().unwrap();
            let back = CanonicalGaussian::from_moments(&m, &c).unwrap();
            prop_assert!(back.max_abs_diff(&gauss) < 1e-10 * gauss.lambda.amax().max(1.0));
        }

        #[test]
        fn product_quotient_roundtrip(
            a in prop::collection::vec(-5.0f64..5.0, 12),
            b in prop::collection::vec(-5.0f64..5.0, 12),
        ) {
            let ga = g(&a[..3], &a[3..12]);
            let gb = g(&b[..3], &b[3..12]);
            let back = ga.product(&gb).unwrap().quotient(&gb).unwrap();
            prop_assert!(back.max_abs_diff(&ga) < 1e-12);
        }
    }
}
