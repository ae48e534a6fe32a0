//! Posterior construction, MAP/Laplace, subsampling MCMC and doubly stochastic VB.

mod laplace;
mod map;
mod mcmc;
mod prior;
mod proposal;
mod toy;
mod vb;

pub use laplace::laplace_approximation;
pub use map::{bfgs_maximize, garch_starts, map_estimate, MapResult};
pub use mcmc::{
    run_chain, ChainOutput, ChainSettings, ExactTarget, ProposalSpace, SubsampledTarget, TargetEstimate, TargetEstimator, Timing,
};
pub use prior::{FlatPrior, GarchPrior, GaussianPrior, PriorSpec};
pub use proposal::{stationary_constrained_propose, StationaryMap};
pub use toy::GaussianMeanModel;
pub use vb::{
    elbo_estimate, elbo_gradient, elbo_non_decreasing, entropy, smooth_elbo, vb_optimize, ElboPoint, FullGradient, GradientOracle,
    GradientSample, SubsampledGradient, VariationalState, VbOutput, VbSettings,
};

use nalgebra::DVector;

use crate::model::{DerivLevel, TermModel};

/// Unnormalised log density on φ. Invalid points give −∞ (value) or `None` (gradient).
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, phi: &[f64]) -> f64;
    fn log_density_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)>;
}

/// Log prior on φ, including the change-of-variables term.
pub trait LogPrior: Sync {
    fn log_prior(&self, phi: &[f64]) -> f64;
    fn log_prior_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)>;
}

/// ℓ(φ) + log π(φ).
pub struct Posterior<'a, M: TermModel + ?Sized, P: LogPrior + ?Sized> {
    pub model: &'a M,
    pub prior: &'a P,
}

impl<'a, M: TermModel + ?Sized, P: LogPrior + ?Sized> Posterior<'a, M, P> {
    pub fn new(model: &'a M, prior: &'a P) -> Self {
        Posterior { model, prior }
    }
}

impl<M: TermModel + ?Sized, P: LogPrior + ?Sized> LogDensity for Posterior<'_, M, P> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, phi: &[f64]) -> f64 {
        let lp = self.prior.log_prior(phi);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self.model.log_likelihood(phi) {
            Ok(ll) if ll.is_finite() => ll + lp,
            _ => f64::NEG_INFINITY,
        }
    }

    fn log_density_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)> {
        let (lp, gp) = self.prior.log_prior_grad(phi)?;
        let path = self.model.terms(phi, self.model.n_obs(), DerivLevel::Gradient).ok()?;
        let v = path.totals.ell + lp;
        v.is_finite().then(|| (v, path.totals.grad + gp))
    }
}

/// Shared by tests and toy targets: an explicit Gaussian log density N(mean, cov).
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    precision: nalgebra::DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, cov: nalgebra::DMatrix<f64>) -> Option<Self> {
        let n = mean.len();
        let chol = cov.clone().cholesky()?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Some(GaussianDensity {
            mean: DVector::from_vec(mean),
            precision: chol.inverse(),
            log_norm: -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn standard(n: usize) -> Self {
        Self::new(vec![0.0; n], nalgebra::DMatrix::identity(n, n)).expect("identity is positive definite")
    }
}

impl LogDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, phi: &[f64]) -> f64 {
        let r = DVector::from_column_slice(phi) - &self.mean;
        self.log_norm - 0.5 * r.dot(&(&self.precision * &r))
    }

    fn log_density_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)> {
        let r = DVector::from_column_slice(phi) - &self.mean;
        let g = -(&self.precision * &r);
        Some((self.log_norm + 0.5 * r.dot(&g), g))
    }
}
