//! Dense multivariate normal with a cached Cholesky factor.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateNormal {
    mean: Vec<f64>,
    /// Row-major covariance as supplied.
    covariance: Vec<f64>,
    /// Row-major lower Cholesky factor.
    chol: Vec<f64>,
    /// `-0.5 d ln 2pi - ln |L|`
    log_norm: f64,
}

impl MultivariateNormal {
    /// `covariance` is row-major, `dim * dim` entries.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("mean must be non-empty".into()));
        }
        if covariance.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: covariance.len(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "mean and covariance must be finite".into(),
            ));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (covariance[i * dim + j], covariance[j * dim + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "entry ({i},{j}) = {a} differs from ({j},{i}) = {b}"
                    )));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &covariance);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let l = chol.l();
        let mut lower = vec![0.0; dim * dim];
        let mut log_det_l = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[(i, j)];
            }
            log_det_l += l[(i, i)].ln();
        }
        Ok(Self {
            mean,
            covariance,
            chol: lower,
            log_norm: -0.5 * dim as f64 * LN_2PI - log_det_l,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn log_det_covariance(&self) -> f64 {
        // log_norm = -0.5 d ln 2pi - 0.5 ln |Sigma|
        -2.0 * (self.log_norm + 0.5 * self.dim() as f64 * LN_2PI)
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        // forward substitution L z = x - mu
        let mut buf = [0.0f64; 8];
        let mut heap = Vec::new();
        let z: &mut [f64] = if d <= buf.len() {
            &mut buf[..d]
        } else {
            heap.resize(d, 0.0);
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[i * d + j] * z[j];
            }
            z[i] = s / self.chol[i * d + i];
            acc += z[i] * z[i];
        }
        acc
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }
}
