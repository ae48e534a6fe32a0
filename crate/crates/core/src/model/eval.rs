use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::density::error_logdensity_partials;
use super::reparam::reparam_derivatives;
use super::variance::VarianceStepper;
use super::{Layout, ModelSpec, ParamVector, PreSample, ReparamMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivLevel {
    None,
    Gradient,
    Hessian,
}

/// ℓ_t with optional gradient and Hessian. Absent derivatives are stored as empty containers.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsDerivatives {
    pub ell: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl ObsDerivatives {
    pub fn zeros(dim: usize, level: DerivLevel) -> Self {
        let (g, h) = match level {
            DerivLevel::None => (0, 0),
            DerivLevel::Gradient => (dim, 0),
            DerivLevel::Hessian => (dim, dim),
        };
        ObsDerivatives { ell: 0.0, grad: DVector::zeros(g), hess: DMatrix::zeros(h, h) }
    }

    pub fn accumulate(&mut self, other: &ObsDerivatives) {
        self.ell += other.ell;
        if self.grad.len() == other.grad.len() {
            self.grad += &other.grad;
        }
        if self.hess.shape() == other.hess.shape() {
            self.hess += &other.hess;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPath {
    pub sigma2: Vec<f64>,
    pub per_obs: Vec<ObsDerivatives>,
    pub totals: ObsDerivatives,
    /// Variance-recursion steps executed while producing this path.
    pub steps: usize,
}

/// Anything that yields per-observation log-density terms ℓ_1..ℓ_upto at a φ.
///
/// Evaluating up to `upto` is expected to cost O(upto); estimators rely on that.
pub trait TermModel: Sync {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn terms(&self, phi: &[f64], upto: usize, level: DerivLevel) -> Result<EvalPath>;

    fn log_likelihood(&self, phi: &[f64]) -> Result<f64> {
        Ok(self.terms(phi, self.n_obs(), DerivLevel::None)?.totals.ell)
    }
}

/// Chain-rule assembly of ∇_θ ℓ_t and ∇²_θ ℓ_t from the σ²_t derivatives and the density partials.
/// `hess_sigma2` is row-major dim_v × dim_v; pass empty slices to skip orders.
pub fn assemble_obs_derivatives(
    spec: &ModelSpec,
    theta: &[f64],
    sigma2: f64,
    grad_sigma2: &[f64],
    hess_sigma2: &[f64],
    y: f64,
) -> Result<ObsDerivatives> {
    let l = spec.layout();
    let dv = l.dim_v;
    let n = l.dim;
    let want_g = grad_sigma2.len() == dv;
    let want_h = want_g && hess_sigma2.len() == dv * dv;
    let nu = l.nu().map(|k| theta[k]);
    let d = error_logdensity_partials(spec.error, y, theta[Layout::MU], sigma2, nu, want_h)?;

    let mut grad = DVector::zeros(if want_g { n } else { 0 });
    if want_g {
        for i in 0..dv {
            grad[i] = d.d_s * grad_sigma2[i];
        }
        grad[0] += d.d_mu;
        if let Some(k) = l.nu() {
            grad[k] = d.d_nu;
        }
    }
    let mut hess = DMatrix::zeros(if want_h { n } else { 0 }, if want_h { n } else { 0 });
    if want_h {
        for i in 0..dv {
            for j in 0..dv {
                hess[(i, j)] = d.d_ss * grad_sigma2[i] * grad_sigma2[j] + d.d_s * hess_sigma2[i * dv + j];
            }
        }
        for i in 0..dv {
            let v = d.d_smu * grad_sigma2[i];
            hess[(i, 0)] += v;
            hess[(0, i)] += v;
        }
        hess[(0, 0)] += d.d_mumu;
        if let Some(k) = l.nu() {
            for i in 0..dv {
                let v = d.d_nus * grad_sigma2[i] + if i == 0 { d.d_numu } else { 0.0 };
                hess[(k, i)] = v;
                hess[(i, k)] = v;
            }
            hess[(k, k)] = d.d_nunu;
        }
    }
    Ok(ObsDerivatives { ell: d.ell, grad, hess })
}

/// A GARCH-family likelihood bound to a data series and pre-sample values.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    pub spec: ModelSpec,
    pub map: ReparamMap,
    pub data: Vec<f64>,
    pub presample: PreSample,
}

impl LikelihoodModel {
    /// `presample = None` uses the sample moments of `data`.
    pub fn new(spec: ModelSpec, data: Vec<f64>, presample: Option<PreSample>) -> Result<Self> {
        spec.validate()?;
        if data.is_empty() {
            return Err(Error::EmptySeries);
        }
        let presample = match presample {
            Some(p) => p,
            None => PreSample::from_moments(&data, spec.p, spec.q)?,
        };
        presample.check(&spec)?;
        Ok(LikelihoodModel { map: ReparamMap::for_spec(&spec), spec, data, presample })
    }

    /// Single forward pass over t = 1..=upto. Derivatives, when requested, are in φ space.
    pub fn online_evaluate(&self, param: &ParamVector, upto: usize, level: DerivLevel) -> Result<EvalPath> {
        let phi = param.to_phi(&self.map)?;
        self.evaluate_phi(&phi.coords, upto, level)
    }

    fn evaluate_phi(&self, phi: &[f64], upto: usize, level: DerivLevel) -> Result<EvalPath> {
        let l = self.spec.layout();
        l.check_len(phi)?;
        if upto > self.data.len() {
            return Err(Error::DimensionMismatch { expected: self.data.len(), got: upto });
        }
        let theta = self.map.to_theta(phi)?;
        let mut st = VarianceStepper::new(&self.spec, &theta, &self.data, &self.presample, level)?;
        let mut path = EvalPath {
            sigma2: Vec::with_capacity(upto),
            per_obs: Vec::with_capacity(upto),
            totals: ObsDerivatives::zeros(l.dim, level),
            steps: 0,
        };
        for t in 0..upto {
            st.step()?;
            let obs = assemble_obs_derivatives(&self.spec, &theta, st.sigma2, &st.grad, &st.hess, self.data[t])?;
            let obs = if level == DerivLevel::None { obs } else { reparam_derivatives(&self.map, &obs, phi)? };
            path.totals.accumulate(&obs);
            path.sigma2.push(st.sigma2);
            path.per_obs.push(obs);
        }
        path.steps = st.steps();
        Ok(path)
    }
}

impl TermModel for LikelihoodModel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn n_obs(&self) -> usize {
        self.data.len()
    }

    fn terms(&self, phi: &[f64], upto: usize, level: DerivLevel) -> Result<EvalPath> {
        self.evaluate_phi(phi, upto, level)
    }

    fn log_likelihood(&self, phi: &[f64]) -> Result<f64> {
        let theta = self.map.to_theta(phi)?;
        let mut st = VarianceStepper::new(&self.spec, &theta, &self.data, &self.presample, DerivLevel::None)?;
        let nu = self.spec.layout().nu().map(|k| theta[k]);
        let mut total = 0.0;
        for &y in &self.data {
            st.step()?;
            total += error_logdensity_partials(self.spec.error, y, theta[Layout::MU], st.sigma2, nu, false)?.ell;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upto_zero_is_empty() {
        let m = LikelihoodModel::new(ModelSpec::garch11(), vec![0.1, -0.2], None).unwrap();
        let path = m.online_evaluate(&ParamVector::theta(vec![0.0, 0.1, 0.1, 0.8]), 0, DerivLevel::Hessian).unwrap();
        assert!(path.per_obs.is_empty());
        assert_eq!(path.totals.ell, 0.0);
        assert!(path.totals.grad.iter().all(|&g| g == 0.0));
        assert_eq!(path.steps, 0);
    }

    #[test]
    fn fast_loglik_matches_path() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
        let m = LikelihoodModel::new(ModelSpec::garch11(), data, None).unwrap();
        let phi = m.map.to_phi(&[0.05, 0.1, 0.1, 0.8]).unwrap();
        let a = m.log_likelihood(&phi).unwrap();
        let b = m.terms(&phi, 40, DerivLevel::Gradient).unwrap().totals.ell;
        assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn gaussian_dimension() {
        let spec = ModelSpec::garch11();
        let m = LikelihoodModel::new(spec, vec![0.3; 5], None).unwrap();
        let path = m.online_evaluate(&ParamVector::theta(vec![0.0, 0.1, 0.1, 0.8]), 5, DerivLevel::Hessian).unwrap();
        assert_eq!(path.totals.grad.len(), 4);
        assert_eq!(path.totals.hess.shape(), (4, 4));
    }
}
