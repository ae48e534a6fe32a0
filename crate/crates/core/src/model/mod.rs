//! GARCH-family volatility models: layout, recursions, densities and simulation.

mod density;
mod eval;
mod reparam;
mod simulate;
pub(crate) mod variance;

pub use density::{error_logdensity_partials, trigamma, DensityPartials};
pub use eval::{assemble_obs_derivatives, DerivLevel, EvalPath, LikelihoodModel, ObsDerivatives, TermModel};
pub use reparam::{reparam_derivatives, ReparamMap, Transform};
pub use simulate::simulate;
pub use variance::{variance_path_with_derivatives, VariancePath};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Garch,
    Tgarch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorLaw {
    Normal,
    #[serde(alias = "student-t", alias = "student_t", alias = "t")]
    StudentT,
}

pub const DEFAULT_LOGISTIC_STEEPNESS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub p: usize,
    pub q: usize,
    pub error: ErrorLaw,
    #[serde(default = "default_steepness")]
    pub logistic_steepness: f64,
}

fn default_steepness() -> f64 {
    DEFAULT_LOGISTIC_STEEPNESS
}

impl ModelSpec {
    pub fn new(family: Family, p: usize, q: usize, error: ErrorLaw) -> Result<Self> {
        let spec = ModelSpec { family, p, q, error, logistic_steepness: DEFAULT_LOGISTIC_STEEPNESS };
        spec.validate()?;
        Ok(spec)
    }

    pub fn garch11() -> Self {
        ModelSpec { family: Family::Garch, p: 1, q: 1, error: ErrorLaw::Normal, logistic_steepness: DEFAULT_LOGISTIC_STEEPNESS }
    }

    pub fn with_steepness(mut self, k: f64) -> Self {
        self.logistic_steepness = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::Domain(format!("orders must be positive, got p={} q={}", self.p, self.q)));
        }
        if !(self.logistic_steepness > 0.0 && self.logistic_steepness.is_finite()) {
            return Err(Error::Domain("logistic steepness must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn dim(&self) -> usize {
        self.layout().dim
    }
}

/// Index bookkeeping for the parameter vector (μ, ω, α, [γ], β, [ν]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub p: usize,
    pub q: usize,
    pub has_gamma: bool,
    pub has_nu: bool,
    /// Length of the variance block θ_v (everything but ν).
    pub dim_v: usize,
    pub dim: usize,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        let has_gamma = spec.family == Family::Tgarch;
        let has_nu = spec.error == ErrorLaw::StudentT;
        let dim_v = 2 + spec.p + if has_gamma { spec.p } else { 0 } + spec.q;
        Layout { p: spec.p, q: spec.q, has_gamma, has_nu, dim_v, dim: dim_v + has_nu as usize }
    }

    pub const MU: usize = 0;
    pub const OMEGA: usize = 1;

    pub fn alpha(&self, i: usize) -> usize {
        2 + i
    }

    pub fn gamma(&self, i: usize) -> usize {
        debug_assert!(self.has_gamma);
        2 + self.p + i
    }

    pub fn beta(&self, j: usize) -> usize {
        2 + self.p + if self.has_gamma { self.p } else { 0 } + j
    }

    pub fn nu(&self) -> Option<usize> {
        self.has_nu.then_some(self.dim_v)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["mu".to_string(), "omega".to_string()];
        names.extend((1..=self.p).map(|i| format!("alpha{i}")));
        if self.has_gamma {
            names.extend((1..=self.p).map(|i| format!("gamma{i}")));
        }
        names.extend((1..=self.q).map(|j| format!("beta{j}")));
        if self.has_nu {
            names.push("nu".into());
        }
        names
    }

    /// Σα + ½Σγ + Σβ.
    pub fn persistence(&self, theta: &[f64]) -> f64 {
        let a: f64 = (0..self.p).map(|i| theta[self.alpha(i)]).sum();
        let g: f64 = if self.has_gamma { (0..self.p).map(|i| theta[self.gamma(i)]).sum() } else { 0.0 };
        let b: f64 = (0..self.q).map(|j| theta[self.beta(j)]).sum();
        a + 0.5 * g + b
    }

    pub fn check_len(&self, coords: &[f64]) -> Result<()> {
        if coords.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: coords.len() });
        }
        Ok(())
    }

    /// Positivity constraints of the original parameterisation (not stationarity).
    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        self.check_len(theta)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        if theta[Self::OMEGA] <= 0.0 {
            return Err(Error::Domain(format!("omega must be positive, got {}", theta[Self::OMEGA])));
        }
        if theta[2..self.dim_v].iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("ARCH/GARCH coefficients must be non-negative".into()));
        }
        if let Some(k) = self.nu() {
            if theta[k] <= 2.0 {
                return Err(Error::Domain(format!("nu must exceed 2, got {}", theta[k])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Theta,
    Phi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub coords: Vec<f64>,
    pub space: Space,
}

impl ParamVector {
    pub fn theta(coords: Vec<f64>) -> Self {
        ParamVector { coords, space: Space::Theta }
    }

    pub fn phi(coords: Vec<f64>) -> Self {
        ParamVector { coords, space: Space::Phi }
    }

    pub fn to_phi(&self, map: &ReparamMap) -> Result<ParamVector> {
        match self.space {
            Space::Phi => Ok(self.clone()),
            Space::Theta => Ok(ParamVector::phi(map.to_phi(&self.coords)?)),
        }
    }

    pub fn to_theta(&self, map: &ReparamMap) -> Result<ParamVector> {
        match self.space {
            Space::Theta => Ok(self.clone()),
            Space::Phi => Ok(ParamVector::theta(map.to_theta(&self.coords)?)),
        }
    }
}

/// Pre-sample values y_0, y_{-1}, ... and σ²_0, σ²_{-1}, ..., treated as known constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreSample {
    pub y_init: Vec<f64>,
    pub sigma2_init: Vec<f64>,
}

impl PreSample {
    pub fn new(y_init: Vec<f64>, sigma2_init: Vec<f64>) -> Result<Self> {
        if sigma2_init.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("pre-sample variances must be positive".into()));
        }
        Ok(PreSample { y_init, sigma2_init })
    }

    pub fn constant(p: usize, q: usize, y: f64, sigma2: f64) -> Result<Self> {
        Self::new(vec![y; p], vec![sigma2; q])
    }

    /// Sample mean for the lagged returns, sample variance for the lagged variances.
    pub fn from_moments(data: &[f64], p: usize, q: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySeries);
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = if data.len() > 1 { data.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 1.0 };
        let var = if var > 0.0 { var } else { 1.0 };
        Self::constant(p, q, mean, var)
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.y_init.len() != spec.p {
            return Err(Error::DimensionMismatch { expected: spec.p, got: self.y_init.len() });
        }
        if self.sigma2_init.len() != spec.q {
            return Err(Error::DimensionMismatch { expected: spec.q, got: self.sigma2_init.len() });
        }
        Ok(())
    }
}

/// ω / (1 − Σα − ½Σγ − Σβ).
pub fn unconditional_variance(spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    let layout = spec.layout();
    layout.check_theta(theta)?;
    let persistence = layout.persistence(theta);
    let denom = 1.0 - persistence;
    if denom <= 0.0 {
        return Err(Error::NonStationary { persistence });
    }
    Ok(theta[Layout::OMEGA] / denom)
}

pub fn is_stationary(spec: &ModelSpec, theta: &[f64]) -> bool {
    spec.layout().persistence(theta) < 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_indices() {
        let spec = ModelSpec { family: Family::Tgarch, p: 2, q: 1, error: ErrorLaw::StudentT, logistic_steepness: 100.0 };
        let l = spec.layout();
        assert_eq!(l.dim_v, 7);
        assert_eq!(l.dim, 8);
        assert_eq!(l.gamma(1), 5);
        assert_eq!(l.beta(0), 6);
        assert_eq!(l.nu(), Some(7));
        assert_eq!(l.names(), ["mu", "omega", "alpha1", "alpha2", "gamma1", "gamma2", "beta1", "nu"]);
    }

    #[test]
    fn gaussian_garch_dimension() {
        let spec = ModelSpec::new(Family::Garch, 2, 3, ErrorLaw::Normal).unwrap();
        assert_eq!(spec.dim(), 2 + 2 + 3);
    }

    #[test]
    fn unconditional_variance_cases() {
        let g = ModelSpec::garch11();
        assert!((unconditional_variance(&g, &[0.0, 0.1, 0.1, 0.8]).unwrap() - 1.0).abs() < 1e-12);
        assert!((unconditional_variance(&g, &[0.0, 0.7, 0.0, 0.0]).unwrap() - 0.7).abs() < 1e-15);
        let t = ModelSpec::new(Family::Tgarch, 1, 1, ErrorLaw::Normal).unwrap();
        assert!((unconditional_variance(&t, &[0.0, 0.1, 0.05, 0.1, 0.8]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(unconditional_variance(&g, &[0.0, 0.1, 0.3, 0.8]), Err(Error::NonStationary { .. })));
    }

    #[test]
    fn rejects_zero_orders() {
        assert!(ModelSpec::new(Family::Garch, 0, 1, ErrorLaw::Normal).is_err());
    }
}
