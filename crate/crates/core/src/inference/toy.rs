use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DerivLevel, EvalPath, ObsDerivatives, TermModel};

/// y_t ~ N(φ, sd² I) with known sd. Each ℓ_t is exactly quadratic in φ, so second-order
/// control variates are perfect; paired with a Gaussian prior the posterior is Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeanModel {
    pub data: Vec<Vec<f64>>,
    pub sd: f64,
}

impl GaussianMeanModel {
    pub fn new(data: Vec<Vec<f64>>, sd: f64) -> Result<Self> {
        let Some(first) = data.first() else { return Err(Error::EmptySeries) };
        let n = first.len();
        if let Some(bad) = data.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        if !(sd > 0.0) {
            return Err(Error::Domain("sd must be positive".into()));
        }
        Ok(GaussianMeanModel { data, sd })
    }

    /// Log evidence and posterior (mean, variance per coordinate) under an isotropic N(0, s0² I) prior.
    pub fn conjugate_posterior(&self, prior_sd: f64) -> (f64, Vec<f64>, f64) {
        let t = self.data.len() as f64;
        let (s2, p2) = (self.sd * self.sd, prior_sd * prior_sd);
        let post_var = 1.0 / (1.0 / p2 + t / s2);
        let mut log_ev = 0.0;
        let mut mean = Vec::new();
        for k in 0..self.dim() {
            let sum: f64 = self.data.iter().map(|r| r[k]).sum();
            let ss: f64 = self.data.iter().map(|r| r[k] * r[k]).sum();
            let m = post_var * sum / s2;
            mean.push(m);
            log_ev +=
                -0.5 * t * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * ss / s2 + 0.5 * (post_var / p2).ln() + 0.5 * m * m / post_var;
        }
        (log_ev, mean, post_var)
    }
}

impl TermModel for GaussianMeanModel {
    fn dim(&self) -> usize {
        self.data[0].len()
    }

    fn n_obs(&self) -> usize {
        self.data.len()
    }

    fn terms(&self, phi: &[f64], upto: usize, level: DerivLevel) -> Result<EvalPath> {
        let n = self.dim();
        if phi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: phi.len() });
        }
        if upto > self.data.len() {
            return Err(Error::DimensionMismatch { expected: self.data.len(), got: upto });
        }
        let s2 = self.sd * self.sd;
        let c = -0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln();
        let mut path =
            EvalPath { sigma2: vec![s2; upto], per_obs: Vec::with_capacity(upto), totals: ObsDerivatives::zeros(n, level), steps: upto };
        for y in &self.data[..upto] {
            let r = DVector::from_iterator(n, y.iter().zip(phi).map(|(a, b)| a - b));
            let mut obs = ObsDerivatives::zeros(n, level);
            obs.ell = c - 0.5 * r.norm_squared() / s2;
            if level != DerivLevel::None {
                obs.grad = r / s2;
            }
            if level == DerivLevel::Hessian {
                obs.hess = DMatrix::identity(n, n) * (-1.0 / s2);
            }
            path.totals.accumulate(&obs);
            path.per_obs.push(obs);
        }
        Ok(path)
    }
}
