use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};
use crate::model::{is_stationary, Layout, ModelSpec, ReparamMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub phi: Vec<f64>,
    pub log_density: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Which start produced the optimum.
    pub start: usize,
}

/// BFGS ascent with Armijo backtracking. Returns `None` if the start itself is invalid.
pub fn bfgs_maximize<D: LogDensity + ?Sized>(target: &D, x0: &[f64], max_iter: usize, gtol: f64) -> Option<MapResult> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, mut gx) = target.log_density_grad(x.as_slice())?;
    // minimise the negative log density
    fx = -fx;
    gx = -gx;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        if gx.amax() < gtol {
            converged = true;
            break;
        }
        let mut p = -(&hinv * &gx);
        let mut slope = gx.dot(&p);
        if slope >= 0.0 {
            hinv = DMatrix::identity(n, n);
            p = -gx.clone();
            slope = gx.dot(&p);
        }
        if first {
            // keep the first trial step moderate in φ units
            let norm = p.norm();
            if norm > 1.0 {
                p /= norm;
                slope /= norm;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + step * &p;
            if let Some((fn_, gn)) = target.log_density_grad(xn.as_slice()) {
                let fn_ = -fn_;
                if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, -gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no progress possible along any tried step
            converged = gx.amax() < gtol.sqrt();
            break;
        };
        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (rho * rho * yhy + rho) * &s * s.transpose() - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        let df = fx - fn_;
        x = xn;
        fx = fn_;
        gx = gn;
        if df.abs() <= 1e-14 * (1.0 + fx.abs()) && gx.amax() < gtol.sqrt() {
            converged = true;
            break;
        }
    }
    Some(MapResult { phi: x.as_slice().to_vec(), log_density: -fx, iterations, converged, start: 0 })
}

/// Best local optimum over the given starts.
pub fn map_estimate<D: LogDensity + ?Sized>(target: &D, starts: &[Vec<f64>]) -> Result<MapResult> {
    let mut best: Option<MapResult> = None;
    for (k, x0) in starts.iter().enumerate() {
        if let Some(mut r) = bfgs_maximize(target, x0, 1000, 1e-6) {
            r.start = k;
            if r.log_density.is_finite() && best.as_ref().is_none_or(|b| r.log_density > b.log_density) {
                best = Some(r);
            }
        }
    }
    best.ok_or_else(|| Error::OptimizationFailure("no start produced a finite optimum".into()))
}

/// Moment-matched start in φ, followed by `n_starts − 1` jittered copies. Deterministic in `seed`.
pub fn garch_starts(spec: &ModelSpec, data: &[f64], n_starts: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if data.is_empty() {
        return Err(Error::EmptySeries);
    }
    let l = spec.layout();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = (data.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).max(1e-12);
    let mut theta = vec![0.0; l.dim];
    theta[Layout::MU] = mean;
    for i in 0..l.p {
        theta[l.alpha(i)] = 0.1 / l.p as f64;
        if l.has_gamma {
            theta[l.gamma(i)] = 0.1 / l.p as f64;
        }
    }
    for j in 0..l.q {
        theta[l.beta(j)] = 0.8 / l.q as f64;
    }
    if let Some(k) = l.nu() {
        theta[k] = 8.0;
    }
    theta[Layout::OMEGA] = var * (1.0 - l.persistence(&theta));
    let map = ReparamMap::for_spec(spec);
    let base = map.to_phi(&theta)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![base.clone()];
    while starts.len() < n_starts.max(1) {
        let mut cand = base.clone();
        for _ in 0..100 {
            cand = base
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    b + 0.3 * z
                })
                .collect();
            if is_stationary(spec, &map.to_theta(&cand)?) {
                break;
            }
        }
        starts.push(cand);
    }
    Ok(starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::GaussianDensity;

    #[test]
    fn finds_gaussian_mode() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let target = GaussianDensity::new(vec![1.0, -3.0], cov).unwrap();
        let r = map_estimate(&target, &[vec![10.0, 10.0], vec![0.0, 0.0]]).unwrap();
        assert!((r.phi[0] - 1.0).abs() < 1e-6 && (r.phi[1] + 3.0).abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn starts_are_deterministic() {
        let spec = ModelSpec::garch11();
        let data: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_eq!(garch_starts(&spec, &data, 4, 9).unwrap(), garch_starts(&spec, &data, 4, 9).unwrap());
    }
}
