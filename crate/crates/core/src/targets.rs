//! Target densities, expressed through their energy `h(x) = -ln pi(x)`.
//!
//! Energies are only defined up to an additive constant per target. The
//! mixture targets here are normalized, so their energies are exact
//! negative log densities; the gamma target drops `ln Gamma(shape)`.

use crate::error::{invalid, Error, Result};
use crate::gaussian::MultivariateNormal;

/// A density known through its energy.
///
/// Points outside the support map to `f64::INFINITY`.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn energy(&self, x: &[f64]) -> f64;

    /// Declared modes, used by the mode-jump proposal and by mode
    /// assignment in diagnostics.
    fn modes(&self) -> Option<&[ModeDescriptor]> {
        None
    }
}

/// A declared mode: a location and the local Gaussian shape around it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDescriptor {
    local: MultivariateNormal,
}

impl ModeDescriptor {
    pub fn new(location: Vec<f64>, local_covariance: Vec<f64>) -> Result<Self> {
        Ok(Self {
            local: MultivariateNormal::new(location, local_covariance)?,
        })
    }

    pub fn location(&self) -> &[f64] {
        self.local.mean()
    }

    pub fn local_covariance(&self) -> &[f64] {
        self.local.covariance()
    }

    /// The Gaussian centered at the mode with the local covariance.
    pub fn local_gaussian(&self) -> &MultivariateNormal {
        &self.local
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim * dim` matrices.
    pub covariances: Vec<Vec<f64>>,
}

impl GaussianMixtureParams {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 {
            return invalid("mixture needs at least one component");
        }
        if self.means.len() != n || self.covariances.len() != n {
            return invalid(format!(
                "mixture has {n} weights, {} means, {} covariances",
                self.means.len(),
                self.covariances.len()
            ));
        }
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid("mixture weights must be positive and finite");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("mixture weights sum to {total}, not 1"));
        }
        let dim = self.dim();
        if dim == 0 {
            return invalid("mixture dimension must be positive");
        }
        for m in &self.means {
            if m.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.len(),
                });
            }
        }
        Ok(())
    }
}

/// Finite Gaussian mixture with precomputed component factorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    params: GaussianMixtureParams,
    components: Vec<MultivariateNormal>,
    log_weights: Vec<f64>,
    modes: Vec<ModeDescriptor>,
}

impl GaussianMixture {
    pub fn new(params: GaussianMixtureParams) -> Result<Self> {
        params.validate()?;
        let components = params
            .means
            .iter()
            .zip(&params.covariances)
            .map(|(m, c)| MultivariateNormal::new(m.clone(), c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let modes = components
            .iter()
            .map(|c| ModeDescriptor { local: c.clone() })
            .collect();
        Ok(Self {
            log_weights: params.weights.iter().map(|w| w.ln()).collect(),
            params,
            components,
            modes,
        })
    }

    pub fn params(&self) -> &GaussianMixtureParams {
        &self.params
    }

    pub fn components(&self) -> &[MultivariateNormal] {
        &self.components
    }

    /// Energy with a dimension check.
    pub fn energy_checked(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.energy(x))
    }

    /// `-ln(w_i N(mu_i, Sigma_i))` evaluated at the component mean.
    pub fn peak_energy(&self, component: usize) -> f64 {
        let c = &self.components[component];
        -(self.log_weights[component] + c.log_density(c.mean()))
    }
}

impl Target for GaussianMixture {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let mut terms = [0.0f64; 8];
        let mut heap = Vec::new();
        let n = self.components.len();
        let terms: &mut [f64] = if n <= terms.len() {
            &mut terms[..n]
        } else {
            heap.resize(n, 0.0);
            &mut heap
        };
        for (t, (c, lw)) in terms
            .iter_mut()
            .zip(self.components.iter().zip(&self.log_weights))
        {
            *t = lw + c.log_density(x);
        }
        -log_sum_exp(terms)
    }

    fn modes(&self) -> Option<&[ModeDescriptor]> {
        Some(&self.modes)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-ln f(x)` for a Gaussian mixture, failing on a dimension mismatch.
pub fn mixture_energy(mixture: &GaussianMixture, x: &[f64]) -> Result<f64> {
    mixture.energy_checked(x)
}

/// Row-major 2x2 covariance with standard deviations `s1`, `s2` and
/// correlation `rho`.
pub fn bivariate_covariance(s1: f64, s2: f64, rho: f64) -> Vec<f64> {
    vec![s1 * s1, s1 * s2 * rho, s1 * s2 * rho, s2 * s2]
}

/// Equal-weight mixture of two highly correlated unit-variance Gaussians
/// at (0,0) with rho = 0.99 and at (5,5) with rho = -0.99.
pub fn make_example1() -> GaussianMixture {
    GaussianMixture::new(GaussianMixtureParams {
        weights: vec![0.5, 0.5],
        means: vec![vec![0.0, 0.0], vec![5.0, 5.0]],
        covariances: vec![
            bivariate_covariance(1.0, 1.0, 0.99),
            bivariate_covariance(1.0, 1.0, -0.99),
        ],
    })
    .expect("example 1 parameters are valid")
}

/// Equal-weight mixture with a very narrow component at (0,0)
/// (sd 0.01 per axis) and a unit one at (5,5), both uncorrelated.
pub fn make_example2() -> GaussianMixture {
    GaussianMixture::new(GaussianMixtureParams {
        weights: vec![0.5, 0.5],
        means: vec![vec![0.0, 0.0], vec![5.0, 5.0]],
        covariances: vec![
            bivariate_covariance(0.01, 0.01, 0.0),
            bivariate_covariance(1.0, 1.0, 0.0),
        ],
    })
    .expect("example 2 parameters are valid")
}

/// Gamma density with shape in (0, 1), which is unbounded at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaTarget {
    shape: f64,
    rate: f64,
}

impl GammaTarget {
    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

pub fn make_gamma_target(shape: f64, rate: f64) -> Result<GammaTarget> {
    if !(shape > 0.0 && shape < 1.0) {
        return invalid(format!("gamma shape must lie in (0, 1), got {shape}"));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return invalid(format!("gamma rate must be positive, got {rate}"));
    }
    Ok(GammaTarget { shape, rate })
}

impl Target for GammaTarget {
    fn dim(&self) -> usize {
        1
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let x = x[0];
        if x <= 0.0 || !x.is_finite() {
            return f64::INFINITY;
        }
        -(self.shape - 1.0) * x.ln() + self.rate * x
    }
}
