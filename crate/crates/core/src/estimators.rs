//! Control variates and weighted difference estimators (WDE) of the log-likelihood and its gradient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DerivLevel, ObsDerivatives, TermModel};
use crate::scheme::{SamplingScheme, Subsample};

/// Second-order Taylor expansions q_t of every ℓ_t around φ★, plus their sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariateCache {
    pub phi_star: Vec<f64>,
    pub per_t: Vec<ObsDerivatives>,
    pub sums: ObsDerivatives,
    /// Recursion steps spent building the cache.
    pub build_steps: usize,
}

pub fn build_control_variates<M: TermModel + ?Sized>(model: &M, phi_star: &[f64]) -> Result<ControlVariateCache> {
    let path = model.terms(phi_star, model.n_obs(), DerivLevel::Hessian)?;
    Ok(ControlVariateCache { phi_star: phi_star.to_vec(), per_t: path.per_obs, sums: path.totals, build_steps: path.steps })
}

impl ControlVariateCache {
    pub fn dim(&self) -> usize {
        self.phi_star.len()
    }

    pub fn len(&self) -> usize {
        self.per_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_t.is_empty()
    }

    fn delta(&self, phi: &[f64]) -> Result<DVector<f64>> {
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: phi.len() });
        }
        Ok(DVector::from_iterator(phi.len(), phi.iter().zip(&self.phi_star).map(|(a, b)| a - b)))
    }

    fn quad(term: &ObsDerivatives, delta: &DVector<f64>) -> f64 {
        term.ell + term.grad.dot(delta) + 0.5 * delta.dot(&(&term.hess * delta))
    }

    /// q_t(φ) for a 1-based index.
    pub fn q_t(&self, t: usize, phi: &[f64]) -> Result<f64> {
        Ok(Self::quad(&self.per_t[t - 1], &self.delta(phi)?))
    }

    /// ∇q_t(φ) = g_t + H_t (φ − φ★)
    pub fn grad_q_t(&self, t: usize, phi: &[f64]) -> Result<DVector<f64>> {
        let term = &self.per_t[t - 1];
        Ok(&term.grad + &term.hess * self.delta(phi)?)
    }

    /// (Σ_t q_t(φ), Σ_t ∇q_t(φ)) from the stored sums only.
    pub fn cv_sum(&self, phi: &[f64]) -> Result<(f64, DVector<f64>)> {
        let delta = self.delta(phi)?;
        let hd = &self.sums.hess * &delta;
        let value = self.sums.ell + self.sums.grad.dot(&delta) + 0.5 * delta.dot(&hd);
        Ok((value, &self.sums.grad + hd))
    }

    /// Residuals e_t(φ) = ℓ_t(φ) − q_t(φ) over the full series.
    pub fn residuals<M: TermModel + ?Sized>(&self, model: &M, phi: &[f64]) -> Result<Vec<f64>> {
        let delta = self.delta(phi)?;
        let path = model.terms(phi, self.len(), DerivLevel::None)?;
        Ok(path.per_obs.iter().zip(&self.per_t).map(|(o, c)| o.ell - Self::quad(c, &delta)).collect())
    }

    /// Residual gradients ∇e_t(φ) over the full series.
    pub fn residual_gradients<M: TermModel + ?Sized>(&self, model: &M, phi: &[f64]) -> Result<Vec<DVector<f64>>> {
        let delta = self.delta(phi)?;
        let path = model.terms(phi, self.len(), DerivLevel::Gradient)?;
        Ok(path.per_obs.iter().zip(&self.per_t).map(|(o, c)| &o.grad - (&c.grad + &c.hess * &delta)).collect())
    }
}

pub fn cv_sum(cache: &ControlVariateCache, phi: &[f64]) -> Result<(f64, DVector<f64>)> {
    cache.cv_sum(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    /// s²/m from the weighted residual terms; `None` when m = 1.
    pub variance_hat: Option<f64>,
    pub u_max: usize,
    pub m: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub value: DVector<f64>,
    pub u_max: usize,
    pub m: usize,
    pub indices: Vec<usize>,
    /// Recursion steps spent on this estimate.
    pub steps: usize,
}

/// Σq + mean of the weighted residuals d_i = e_i/p_i, with the sample-variance estimate s²/m.
pub fn weighted_difference(sum_q: f64, terms: &[(f64, f64)]) -> (f64, Option<f64>) {
    let m = terms.len();
    let d: Vec<f64> = terms.iter().map(|&(e, p)| e / p).collect();
    let mean = d.iter().sum::<f64>() / m as f64;
    let var_hat = (m >= 2).then(|| {
        let ss: f64 = d.iter().map(|v| (v - mean).powi(2)).sum();
        ss / (m - 1) as f64 / m as f64
    });
    (sum_q + mean, var_hat)
}

fn check_subsample(sub: &Subsample, n: usize) -> Result<()> {
    if sub.indices.is_empty() {
        return Err(Error::Domain("empty subsample".into()));
    }
    if sub.u_max > n || sub.indices.iter().any(|&u| u == 0 || u > n) {
        return Err(Error::Domain(format!("subsample indices must lie in 1..={n}")));
    }
    Ok(())
}

/// Log-likelihood WDE. Runs the recursion only to u_max.
pub fn wde_loglik<M: TermModel + ?Sized>(
    model: &M,
    cache: &ControlVariateCache,
    scheme: &SamplingScheme,
    phi: &[f64],
    sub: &Subsample,
) -> Result<EstimateResult> {
    check_subsample(sub, cache.len())?;
    let delta = cache.delta(phi)?;
    let path = model.terms(phi, sub.u_max, DerivLevel::None)?;
    let terms: Vec<(f64, f64)> = sub
        .indices
        .iter()
        .map(|&u| {
            let e = path.per_obs[u - 1].ell - ControlVariateCache::quad(&cache.per_t[u - 1], &delta);
            (e, scheme.prob(u))
        })
        .collect();
    let (sum_q, _) = cache.cv_sum(phi)?;
    let (value, variance_hat) = weighted_difference(sum_q, &terms);
    Ok(EstimateResult { value, variance_hat, u_max: sub.u_max, m: sub.indices.len(), indices: sub.indices.clone() })
}

/// Gradient WDE with first-order gradient control variates, reusing the same subsample.
pub fn wde_grad<M: TermModel + ?Sized>(
    model: &M,
    cache: &ControlVariateCache,
    scheme: &SamplingScheme,
    phi: &[f64],
    sub: &Subsample,
) -> Result<GradEstimate> {
    check_subsample(sub, cache.len())?;
    let delta = cache.delta(phi)?;
    let path = model.terms(phi, sub.u_max, DerivLevel::Gradient)?;
    let (_, sum_gq) = cache.cv_sum(phi)?;
    let m = sub.indices.len();
    let mut acc = DVector::zeros(cache.dim());
    for &u in &sub.indices {
        let c = &cache.per_t[u - 1];
        let e = &path.per_obs[u - 1].grad - (&c.grad + &c.hess * &delta);
        acc += e / scheme.prob(u);
    }
    Ok(GradEstimate { value: sum_gq + acc / m as f64, u_max: sub.u_max, m, indices: sub.indices.clone(), steps: path.steps })
}

/// Exact variance of the WDE: (1/m) Σ_t p_t (e_t/p_t − e)², e = Σ e_t.
pub fn exact_variance(residuals: &[f64], probs: &[f64], m: usize) -> Result<f64> {
    if residuals.len() != probs.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: residuals.len() });
    }
    if m == 0 {
        return Err(Error::Domain("subsample size must be positive".into()));
    }
    let total: f64 = residuals.iter().sum();
    let mut s = 0.0;
    for (&e, &p) in residuals.iter().zip(probs) {
        if p > 0.0 {
            s += p * (e / p - total).powi(2);
        } else if e != 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(s / m as f64)
}

/// Covariance matrix of the gradient WDE (O(T d²); diagnostics only).
pub fn exact_grad_covariance(residual_grads: &[DVector<f64>], probs: &[f64], m: usize) -> Result<DMatrix<f64>> {
    if residual_grads.len() != probs.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: residual_grads.len() });
    }
    let d = residual_grads.first().map_or(0, |g| g.len());
    let total = residual_grads.iter().fold(DVector::zeros(d), |acc, g| acc + g);
    let mut cov = DMatrix::zeros(d, d);
    for (g, &p) in residual_grads.iter().zip(probs) {
        if p > 0.0 {
            let r = g / p - &total;
            cov += p * &r * r.transpose();
        }
    }
    Ok(cov / m as f64)
}

/// Worst-case ratio of TPD to uniform variance at floor c: ((1/c) − ρ)/(1 − ρ), ρ = e²/(T Σe_t²).
pub fn variance_ratio_bound(residuals: &[f64], c: f64) -> Result<(f64, f64)> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Domain(format!("floor fraction c must lie in (0, 1], got {c}")));
    }
    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    if ss == 0.0 {
        return Err(Error::DegenerateResiduals);
    }
    let total: f64 = residuals.iter().sum();
    let rho = (total * total / (residuals.len() as f64 * ss)).min(1.0);
    let bound = if c == 1.0 {
        1.0
    } else if 1.0 - rho <= f64::EPSILON {
        // homogeneous residuals: uniform sampling is exact, any other scheme is infinitely worse
        f64::INFINITY
    } else {
        (1.0 / c - rho) / (1.0 - rho)
    };
    Ok((bound, rho))
}

/// ℓ̂ − V̂/2, the log of the bias-corrected likelihood estimate.
pub fn bias_corrected_loglik(est: &EstimateResult) -> Result<f64> {
    match est.variance_hat {
        Some(v) => Ok(est.value - 0.5 * v),
        None => Err(Error::UndefinedVariance { m: est.m }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ELL: [f64; 3] = [-1.0, -2.0, -3.0];
    const Q: [f64; 3] = [-1.1, -1.9, -3.2];
    const P: [f64; 3] = [0.5, 0.3, 0.2];

    fn outcome(u: usize) -> f64 {
        let sum_q: f64 = Q.iter().sum();
        weighted_difference(sum_q, &[(ELL[u - 1] - Q[u - 1], P[u - 1])]).0
    }

    #[test]
    fn enumerated_outcomes() {
        assert!((outcome(1) + 6.0).abs() < 1e-12);
        assert!((outcome(2) + 6.533_333_333_333_333).abs() < 1e-12);
        assert!((outcome(3) + 5.2).abs() < 1e-12);
        let mean: f64 = (1..=3).map(|u| P[u - 1] * outcome(u)).sum();
        assert!((mean + 6.0).abs() < 1e-12);
    }

    #[test]
    fn exact_variance_matches_enumeration() {
        let e: Vec<f64> = ELL.iter().zip(&Q).map(|(a, b)| a - b).collect();
        let v = exact_variance(&e, &P, 1).unwrap();
        let mean: f64 = (1..=3).map(|u| P[u - 1] * outcome(u)).sum();
        let enum_var: f64 = (1..=3).map(|u| P[u - 1] * (outcome(u) - mean).powi(2)).sum();
        assert!((v - enum_var).abs() < 1e-12);
        assert!((v - 0.213_333_333_333_333).abs() < 1e-12);
    }

    #[test]
    fn variance_edge_cases() {
        assert_eq!(exact_variance(&[0.0; 4], &[0.25; 4], 3).unwrap(), 0.0);
        assert!(exact_variance(&[1.0; 4], &[0.25; 4], 1).unwrap().abs() < 1e-24);
    }

    #[test]
    fn single_draw_has_no_variance_estimate() {
        let (_, v) = weighted_difference(0.0, &[(0.3, 0.5)]);
        assert!(v.is_none());
        let est = EstimateResult { value: -10.0, variance_hat: None, u_max: 1, m: 1, indices: vec![1] };
        assert!(matches!(bias_corrected_loglik(&est), Err(Error::UndefinedVariance { m: 1 })));
    }

    #[test]
    fn bias_correction_arithmetic() {
        let est = EstimateResult { value: -10.0, variance_hat: Some(2.0), u_max: 3, m: 2, indices: vec![1, 3] };
        assert_eq!(bias_corrected_loglik(&est).unwrap(), -11.0);
        let est = EstimateResult { variance_hat: Some(0.0), ..est };
        assert_eq!(bias_corrected_loglik(&est).unwrap(), -10.0);
    }

    #[test]
    fn ratio_bound_cases() {
        assert_eq!(variance_ratio_bound(&[0.3, -0.1, 0.5], 1.0).unwrap().0, 1.0);
        let (b, rho) = variance_ratio_bound(&[1.0, -1.0, 2.0, -2.0], 0.25).unwrap();
        assert_eq!(rho, 0.0);
        assert!((b - 4.0).abs() < 1e-12);
        assert!(matches!(variance_ratio_bound(&[0.0, 0.0], 0.5), Err(Error::DegenerateResiduals)));
    }

    #[test]
    fn order_invariance() {
        let a = weighted_difference(1.0, &[(0.1, 0.2), (0.4, 0.5), (-0.3, 0.3)]);
        let b = weighted_difference(1.0, &[(-0.3, 0.3), (0.1, 0.2), (0.4, 0.5)]);
        assert!((a.0 - b.0).abs() < 1e-15);
        assert!((a.1.unwrap() - b.1.unwrap()).abs() < 1e-15);
    }
}
