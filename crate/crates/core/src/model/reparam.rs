use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelSpec, ObsDerivatives};
use crate::error::{Error, Result};

/// Elementwise map from the unconstrained φ to the original θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// θ = exp(φ)
    Log,
    /// θ = 2 + exp(φ)
    LogShift2,
}

impl Transform {
    pub fn to_theta(self, phi: f64) -> f64 {
        match self {
            Transform::Identity => phi,
            Transform::Log => phi.exp(),
            Transform::LogShift2 => 2.0 + phi.exp(),
        }
    }

    pub fn to_phi(self, theta: f64) -> Option<f64> {
        match self {
            Transform::Identity => Some(theta),
            Transform::Log if theta > 0.0 => Some(theta.ln()),
            Transform::LogShift2 if theta > 2.0 => Some((theta - 2.0).ln()),
            _ => None,
        }
    }

    /// (dθ/dφ, d²θ/dφ²)
    pub fn derivs(self, phi: f64) -> (f64, f64) {
        match self {
            Transform::Identity => (1.0, 0.0),
            Transform::Log | Transform::LogShift2 => {
                let e = phi.exp();
                (e, e)
            }
        }
    }

    /// log |dθ/dφ|
    pub fn log_jacobian(self, phi: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log | Transform::LogShift2 => phi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReparamMap {
    pub kinds: Vec<Transform>,
}

impl ReparamMap {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let l = spec.layout();
        let mut kinds = vec![Transform::Log; l.dim];
        kinds[0] = Transform::Identity;
        if let Some(k) = l.nu() {
            kinds[k] = Transform::LogShift2;
        }
        ReparamMap { kinds }
    }

    pub fn identity(dim: usize) -> Self {
        ReparamMap { kinds: vec![Transform::Identity; dim] }
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.kinds.len() {
            return Err(Error::DimensionMismatch { expected: self.kinds.len(), got: n });
        }
        Ok(())
    }

    pub fn to_theta(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check(phi.len())?;
        Ok(self.kinds.iter().zip(phi).map(|(k, &v)| k.to_theta(v)).collect())
    }

    pub fn to_phi(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta.len())?;
        self.kinds
            .iter()
            .zip(theta)
            .enumerate()
            .map(|(i, (k, &v))| {
                k.to_phi(v).ok_or_else(|| Error::Domain(format!("coordinate {i} = {v} outside the support of its transform")))
            })
            .collect()
    }

    pub fn log_jacobian(&self, phi: &[f64]) -> f64 {
        self.kinds.iter().zip(phi).map(|(k, &v)| k.log_jacobian(v)).sum()
    }
}

/// Chain rule from θ-space derivatives to φ-space: g_φ = J g_θ, H_φ = J H_θ J + diag(g_θ ∘ h'').
pub fn reparam_derivatives(map: &ReparamMap, theta_derivs: &ObsDerivatives, phi: &[f64]) -> Result<ObsDerivatives> {
    map.check(phi.len())?;
    let n = phi.len();
    let (jac, curv): (Vec<f64>, Vec<f64>) = map.kinds.iter().zip(phi).map(|(k, &v)| k.derivs(v)).unzip();
    let grad = if theta_derivs.grad.len() == n { DVector::from_fn(n, |i, _| jac[i] * theta_derivs.grad[i]) } else { DVector::zeros(0) };
    let hess = if theta_derivs.hess.nrows() == n && grad.len() == n {
        let mut h = DMatrix::from_fn(n, n, |i, j| jac[i] * theta_derivs.hess[(i, j)] * jac[j]);
        for i in 0..n {
            h[(i, i)] += theta_derivs.grad[i] * curv[i];
        }
        h
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(ObsDerivatives { ell: theta_derivs.ell, grad, hess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorLaw, Family};

    #[test]
    fn round_trip() {
        let spec = ModelSpec::new(Family::Tgarch, 1, 1, ErrorLaw::StudentT).unwrap();
        let map = ReparamMap::for_spec(&spec);
        let theta = [0.03, 0.1, 0.05, 0.1, 0.8, 7.5];
        let back = map.to_theta(&map.to_phi(&theta).unwrap()).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            assert!(((a - b) / a).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_map_is_noop() {
        let d = ObsDerivatives {
            ell: -1.5,
            grad: DVector::from_vec(vec![1.0, 2.0]),
            hess: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 3.0]),
        };
        let out = reparam_derivatives(&ReparamMap::identity(2), &d, &[0.3, -0.2]).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn log_map_at_zero() {
        let d = ObsDerivatives { ell: 0.0, grad: DVector::from_vec(vec![2.5]), hess: DMatrix::from_element(1, 1, -4.0) };
        let map = ReparamMap { kinds: vec![Transform::Log] };
        let out = reparam_derivatives(&map, &d, &[0.0]).unwrap();
        assert_eq!(out.grad[0], 2.5);
        assert_eq!(out.hess[(0, 0)], -4.0 + 2.5);
    }

    #[test]
    fn rejects_out_of_support() {
        let map = ReparamMap { kinds: vec![Transform::LogShift2] };
        assert!(map.to_phi(&[1.9]).is_err());
    }
}
