//! Chain diagnostics (ESS, LIS, compute fraction) and the log predictive density score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{ChainOutput, Timing};
use crate::model::variance::VarianceStepper;
use crate::model::{error_logdensity_partials, is_stationary, DerivLevel, Layout, ModelSpec, PreSample};

fn autocov(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Integrated autocorrelation time with Geyer's initial positive sequence truncation.
/// Constant series give 1.
pub fn iact(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = autocov(x, mean, 0);
    if !(c0 > 0.0) {
        return 1.0;
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocov(x, mean, 2 * k) + autocov(x, mean, 2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    tau.max(1.0 / n as f64)
}

/// n / τ, capped at n.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    (x.len() as f64 / iact(x)).min(x.len() as f64)
}

/// Longest run of consecutive iterations whose state equals the previous one exactly.
pub fn longest_immobility_streak<T: PartialEq>(states: &[T]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for w in states.windows(2) {
        if w[0] == w[1] {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub ess: Vec<f64>,
    pub lis: usize,
    pub acceptance_rate: f64,
    pub mean_umax: f64,
    /// Log-density work relative to `iterations` full passes over the data.
    pub compute_fraction: f64,
    pub iterations: usize,
    pub draws: usize,
    pub timing: Timing,
}

/// `overhead` counts recursion steps spent outside the chain (pilot, tuning, cache build).
pub fn chain_diagnostics(chain: &ChainOutput, t_len: usize, overhead: usize) -> Result<DiagnosticsReport> {
    let draws = chain.draws();
    if draws.is_empty() {
        return Err(Error::Domain("chain has no post-burn-in draws".into()));
    }
    let dim = draws[0].len();
    let ess = (0..dim).map(|k| effective_sample_size(&draws.iter().map(|d| d[k]).collect::<Vec<_>>())).collect();
    Ok(DiagnosticsReport {
        ess,
        lis: longest_immobility_streak(&chain.samples),
        acceptance_rate: chain.acceptance_rate(),
        mean_umax: chain.mean_umax(),
        compute_fraction: compute_fraction(&chain.u_max, overhead, t_len),
        iterations: chain.iterations(),
        draws: draws.len(),
        timing: chain.timing.clone(),
    })
}

/// (Σ u_max + overhead) / (iterations · T)
pub fn compute_fraction(u_max: &[usize], overhead: usize, t_len: usize) -> f64 {
    let work = u_max.iter().sum::<usize>() + overhead;
    work as f64 / (u_max.len() * t_len) as f64
}

/// Every `len / m`-th draw, m draws in total (all of them when fewer are available).
pub fn thin_uniform<T: Clone>(draws: &[T], m: usize) -> Vec<T> {
    if m == 0 || draws.len() <= m {
        return draws.to_vec();
    }
    let stride = draws.len() / m;
    draws.iter().step_by(stride).take(m).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpdsResult {
    pub lpds: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Draws that contributed.
    pub used: usize,
    /// Non-stationary or numerically invalid draws that were dropped.
    pub skipped: usize,
    pub per_draw: Vec<f64>,
}

/// Σ_test log p(y_t | past, θ): the recursion runs through `train` first so the test
/// set starts from the training tail state.
pub fn predictive_log_density(spec: &ModelSpec, theta: &[f64], train: &[f64], presample: &PreSample, test: &[f64]) -> Result<f64> {
    let joined: Vec<f64> = train.iter().chain(test).copied().collect();
    let mut st = VarianceStepper::new(spec, theta, &joined, presample, DerivLevel::None)?;
    let nu = spec.layout().nu().map(|k| theta[k]);
    let mut total = 0.0;
    for (t, &y) in joined.iter().enumerate() {
        st.step()?;
        if t >= train.len() {
            total += error_logdensity_partials(spec.error, y, theta[Layout::MU], st.sigma2, nu, false)?.ell;
        }
    }
    Ok(total)
}

/// log((1/M) Σ_m p(test | θ_m)) over θ-space draws, with a 95% delta-method interval
/// whose variance is inflated by the IACT of the per-draw predictive densities.
pub fn lpds_evaluate(spec: &ModelSpec, draws_theta: &[Vec<f64>], train: &[f64], presample: &PreSample, test: &[f64]) -> Result<LpdsResult> {
    if test.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut per_draw = Vec::with_capacity(draws_theta.len());
    let mut skipped = 0;
    for theta in draws_theta {
        if !is_stationary(spec, theta) {
            skipped += 1;
            continue;
        }
        match predictive_log_density(spec, theta, train, presample, test) {
            Ok(v) if v.is_finite() => per_draw.push(v),
            Ok(_) => skipped += 1,
            Err(e) if e.is_rejection() => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if per_draw.is_empty() {
        return Err(Error::Domain("no usable draws for the predictive score".into()));
    }
    let m = per_draw.len() as f64;
    let max = per_draw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = per_draw.iter().map(|v| (v - max).exp()).collect();
    let wbar = w.iter().sum::<f64>() / m;
    let lpds = max + wbar.ln();
    let half = if per_draw.len() < 2 {
        0.0
    } else {
        let s2 = w.iter().map(|v| (v - wbar).powi(2)).sum::<f64>() / (m - 1.0);
        let var_mean = iact(&w) * s2 / m;
        1.96 * var_mean.sqrt() / wbar
    };
    Ok(LpdsResult { lpds, ci_low: lpds - half, ci_high: lpds + half, used: per_draw.len(), skipped, per_draw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lis_conventions() {
        assert_eq!(longest_immobility_streak(&[1, 1, 1, 2, 2]), 2);
        assert_eq!(longest_immobility_streak(&[1, 2, 3, 4]), 0);
        assert_eq!(longest_immobility_streak::<i32>(&[]), 0);
    }

    #[test]
    fn iid_ess_is_near_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&x);
        assert!((ess - 10_000.0).abs() < 1_500.0, "{ess}");
    }

    #[test]
    fn ar1_iact_matches_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho: f64 = 0.8;
        let mut x = vec![0.0; 200_000];
        for i in 1..x.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[i] = rho * x[i - 1] + z;
        }
        let expect = (1.0 + rho) / (1.0 - rho);
        assert!((iact(&x) - expect).abs() < 0.1 * expect);
    }

    #[test]
    fn identical_draws_give_zero_width() {
        let spec = ModelSpec::garch11();
        let pre = PreSample::constant(1, 1, 0.0, 1.0).unwrap();
        let draws = vec![vec![0.0, 0.1, 0.1, 0.8]; 5];
        let r = lpds_evaluate(&spec, &draws, &[0.2, -0.1], &pre, &[0.5, 1.0]).unwrap();
        assert_eq!(r.ci_low, r.ci_high);
    }

    #[test]
    fn thinning_is_uniform() {
        let v: Vec<usize> = (0..10_000).collect();
        let t = thin_uniform(&v, 100);
        assert_eq!(t.len(), 100);
        assert_eq!(t[1] - t[0], 100);
    }
}
