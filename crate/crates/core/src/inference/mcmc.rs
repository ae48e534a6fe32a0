use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::proposal::StationaryMap;
use super::{LogDensity, LogPrior};
use crate::error::{Error, Result};
use crate::estimators::{bias_corrected_loglik, wde_loglik, ControlVariateCache};
use crate::model::TermModel;
use crate::scheme::SamplingScheme;

/// One evaluation of the (possibly noisy) log target at φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEstimate {
    pub value: f64,
    /// Recursion depth charged to this evaluation.
    pub u_max: usize,
    /// Recursion steps actually executed.
    pub steps: usize,
}

/// A log target the chain can query. Noisy targets draw their auxiliary randomness from `rng`.
pub trait TargetEstimator: Sync {
    fn dim(&self) -> usize;
    fn estimate<R: Rng + ?Sized>(&self, phi: &[f64], rng: &mut R) -> Result<TargetEstimate>;
}

/// Exact log density; every evaluation is charged a full pass of length `t_len`.
pub struct ExactTarget<D: LogDensity> {
    pub density: D,
    pub t_len: usize,
}

impl<D: LogDensity> TargetEstimator for ExactTarget<D> {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn estimate<R: Rng + ?Sized>(&self, phi: &[f64], _rng: &mut R) -> Result<TargetEstimate> {
        let value = self.density.log_density(phi);
        Ok(TargetEstimate { value, u_max: self.t_len, steps: self.t_len })
    }
}

/// Bias-corrected WDE of ℓ(φ) plus the log prior, with a fresh subsample per call.
pub struct SubsampledTarget<'a, M: TermModel + ?Sized, P: LogPrior + ?Sized> {
    pub model: &'a M,
    pub prior: &'a P,
    pub cache: &'a ControlVariateCache,
    pub scheme: &'a SamplingScheme,
    pub m: usize,
}

impl<M: TermModel + ?Sized, P: LogPrior + ?Sized> TargetEstimator for SubsampledTarget<'_, M, P> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn estimate<R: Rng + ?Sized>(&self, phi: &[f64], rng: &mut R) -> Result<TargetEstimate> {
        // indices are drawn even when the prior rejects, so the index stream and the
        // recorded u_max do not depend on where the chain wanders
        let sub = self.scheme.draw_indices(self.m, rng);
        let lp = self.prior.log_prior(phi);
        if !lp.is_finite() {
            return Ok(TargetEstimate { value: f64::NEG_INFINITY, u_max: sub.u_max, steps: 0 });
        }
        let est = wde_loglik(self.model, self.cache, self.scheme, phi, &sub)?;
        let value = bias_corrected_loglik(&est)? + lp;
        Ok(TargetEstimate { value, u_max: sub.u_max, steps: sub.u_max })
    }
}

/// Coordinates in which the Gaussian random walk moves.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalSpace {
    Phi,
    /// Unconstrained ψ; every proposal is stationary and the MH ratio carries the Jacobian.
    Stationary(StationaryMap),
}

impl ProposalSpace {
    fn to_state(&self, phi: &[f64]) -> Result<Vec<f64>> {
        match self {
            ProposalSpace::Phi => Ok(phi.to_vec()),
            ProposalSpace::Stationary(m) => m.phi_to_psi(phi),
        }
    }

    fn to_phi(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ProposalSpace::Phi => Ok(x.to_vec()),
            ProposalSpace::Stationary(m) => m.psi_to_phi(x),
        }
    }

    /// log |∂φ/∂x|; constant (zero) in φ coordinates.
    fn log_jacobian(&self, x: &[f64]) -> Result<f64> {
        match self {
            ProposalSpace::Phi => Ok(0.0),
            ProposalSpace::Stationary(m) => m.log_det_phi_psi(x),
        }
    }

    /// Carries a φ-space covariance into proposal coordinates at `phi`.
    fn transport_cov(&self, phi: &[f64], cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            ProposalSpace::Phi => Ok(cov.clone()),
            ProposalSpace::Stationary(m) => {
                let j = m.jacobian_psi_phi(phi)?;
                Ok(&j * cov * j.transpose())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Multiplies the supplied covariance to give the initial proposal covariance.
    pub initial_scale: f64,
    /// Re-estimate the proposal covariance every this many burn-in iterations; 0 disables.
    pub adapt_interval: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings { iterations: 12_000, burn_in: 2_000, seed: 0, initial_scale: 0.3, adapt_interval: 100 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub tuning: f64,
    pub control_variates: f64,
    pub sampling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    /// φ after every iteration, burn-in included.
    pub samples: Vec<Vec<f64>>,
    /// Log-target estimate retained for the current state after every iteration.
    pub log_target: Vec<f64>,
    /// u_max of each iteration's proposal evaluation.
    pub u_max: Vec<usize>,
    pub accepted: Vec<bool>,
    pub burn_in: usize,
    pub seed: u64,
    /// Recursion steps spent inside the chain, initial evaluation included.
    pub steps: usize,
    pub timing: Timing,
}

impl ChainOutput {
    pub fn iterations(&self) -> usize {
        self.samples.len()
    }

    /// Post-burn-in draws.
    pub fn draws(&self) -> &[Vec<f64>] {
        &self.samples[self.burn_in..]
    }

    pub fn accept_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accept_count() as f64 / self.accepted.len().max(1) as f64
    }

    pub fn mean_umax(&self) -> f64 {
        self.u_max.iter().sum::<usize>() as f64 / self.u_max.len().max(1) as f64
    }
}

fn chain_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut a = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ChaCha8Rng::seed_from_u64(seed);
    a.set_stream(0);
    b.set_stream(1);
    (a, b)
}

fn empirical_cov(history: &[Vec<f64>]) -> DMatrix<f64> {
    let n = history[0].len();
    let k = history.len() as f64;
    let mut mean = DVector::zeros(n);
    for h in history {
        mean += DVector::from_column_slice(h);
    }
    mean /= k;
    let mut cov = DMatrix::zeros(n, n);
    for h in history {
        let r = DVector::from_column_slice(h) - &mean;
        cov += &r * r.transpose();
    }
    cov / (k - 1.0)
}

/// Random-walk Metropolis–Hastings on `target`, started at `phi0`.
///
/// Proposals and accept uniforms come from stream 0 of the seed, auxiliary target randomness
/// from stream 1, so noisy and exact targets see identical proposal sequences.
pub fn run_chain<T: TargetEstimator + ?Sized>(
    target: &T,
    phi0: &[f64],
    cov_phi: &DMatrix<f64>,
    space: &ProposalSpace,
    settings: &ChainSettings,
) -> Result<ChainOutput> {
    let n = target.dim();
    if phi0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: phi0.len() });
    }
    if settings.burn_in > settings.iterations {
        return Err(Error::Domain("burn-in exceeds the number of iterations".into()));
    }
    let start = Instant::now();
    let (mut rng, mut aux) = chain_rngs(settings.seed);

    let mut x = space.to_state(phi0)?;
    let mut phi = phi0.to_vec();
    let cov0 = space.transport_cov(phi0, cov_phi)? * settings.initial_scale;
    let mut chol = cov0.cholesky().ok_or_else(|| Error::Domain("initial proposal covariance is not positive definite".into()))?.l();

    let first = target.estimate(&phi, &mut aux)?;
    if !first.value.is_finite() {
        return Err(Error::Domain("log target is not finite at the initial state".into()));
    }
    let mut current = first.value + space.log_jacobian(&x)?;
    let mut log_target_now = first.value;
    let mut steps = first.steps;

    let iters = settings.iterations;
    let mut out = ChainOutput {
        samples: Vec::with_capacity(iters),
        log_target: Vec::with_capacity(iters),
        u_max: Vec::with_capacity(iters),
        accepted: Vec::with_capacity(iters),
        burn_in: settings.burn_in,
        seed: settings.seed,
        steps: 0,
        timing: Timing::default(),
    };
    let mut history: Vec<Vec<f64>> = Vec::new();
    let scale = 2.38 * 2.38 / n as f64;

    for it in 0..iters {
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let u: f64 = rng.random();
        let step = &chol * z;
        let xp: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();

        let proposal = space.to_phi(&xp).and_then(|phip| {
            let est = target.estimate(&phip, &mut aux)?;
            let lj = if est.value.is_finite() { space.log_jacobian(&xp)? } else { 0.0 };
            Ok((phip, est, lj))
        });
        let mut accept = false;
        let mut cost = 0;
        match proposal {
            Ok((phip, est, lj)) => {
                cost = est.u_max;
                steps += est.steps;
                let cand = est.value + lj;
                if cand.is_finite() && u.ln() < cand - current {
                    accept = true;
                    x = xp;
                    phi = phip;
                    current = cand;
                    log_target_now = est.value;
                }
            }
            Err(e) if e.is_rejection() => {}
            Err(e) => return Err(e),
        }
        out.samples.push(phi.clone());
        out.log_target.push(log_target_now);
        out.u_max.push(cost);
        out.accepted.push(accept);

        if it < settings.burn_in {
            history.push(x.clone());
            if settings.adapt_interval > 0 && (it + 1) % settings.adapt_interval == 0 && history.len() > n + 1 {
                let cov = empirical_cov(&history) * scale + DMatrix::identity(n, n) * 1e-10;
                if let Some(c) = cov.cholesky() {
                    chol = c.l();
                }
            }
        }
    }
    out.steps = steps;
    out.timing.sampling = start.elapsed().as_secs_f64();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::GaussianDensity;

    #[test]
    fn recorded_acceptance_matches_flags() {
        let target = ExactTarget { density: GaussianDensity::standard(2), t_len: 1 };
        let s = ChainSettings { iterations: 500, burn_in: 100, seed: 3, ..Default::default() };
        let out = run_chain(&target, &[0.0, 0.0], &DMatrix::identity(2, 2), &ProposalSpace::Phi, &s).unwrap();
        assert_eq!(out.draws().len(), 400);
        let moves = (1..out.samples.len()).filter(|&i| out.samples[i] != out.samples[i - 1]).count();
        assert!(moves <= out.accept_count());
        assert_eq!(out.acceptance_rate(), out.accept_count() as f64 / 500.0);
    }

    #[test]
    fn flat_target_always_accepts() {
        struct Flat;
        impl LogDensity for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn log_density_grad(&self, _: &[f64]) -> Option<(f64, DVector<f64>)> {
                Some((0.0, DVector::zeros(1)))
            }
        }
        let target = ExactTarget { density: Flat, t_len: 1 };
        let s = ChainSettings { iterations: 200, burn_in: 0, seed: 1, ..Default::default() };
        let out = run_chain(&target, &[0.0], &DMatrix::identity(1, 1), &ProposalSpace::Phi, &s).unwrap();
        assert_eq!(out.accept_count(), 200);
    }

    #[test]
    fn same_seed_same_chain() {
        let target = ExactTarget { density: GaussianDensity::standard(3), t_len: 1 };
        let s = ChainSettings { iterations: 300, burn_in: 150, seed: 11, ..Default::default() };
        let a = run_chain(&target, &[0.1; 3], &DMatrix::identity(3, 3), &ProposalSpace::Phi, &s).unwrap();
        let b = run_chain(&target, &[0.1; 3], &DMatrix::identity(3, 3), &ProposalSpace::Phi, &s).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
