use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LogDensity, LogPrior};
use crate::error::{Error, Result};
use crate::estimators::{wde_grad, ControlVariateCache};
use crate::model::TermModel;
use crate::scheme::SamplingScheme;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// q(φ) = N(μ, BBᵀ + d²I). The scale is stored as log d so the covariance stays positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    pub b: Vec<f64>,
    pub log_d: f64,
}

impl VariationalState {
    pub fn new(mu: Vec<f64>, b: Vec<f64>, d: f64) -> Result<Self> {
        if mu.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), got: b.len() });
        }
        if !(d > 0.0) {
            return Err(Error::Domain("isotropic scale d must be positive".into()));
        }
        Ok(VariationalState { mu, b, log_d: d.ln() })
    }

    /// μ at the mode, B = 0, d² a tenth of the median Laplace marginal variance.
    pub fn from_laplace(mode: &[f64], cov: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let mut diag: Vec<f64> = cov.diagonal().iter().copied().collect();
        diag.sort_by(f64::total_cmp);
        let med = diag.get(diag.len().saturating_sub(1) / 2).copied().unwrap_or(1.0);
        Self::new(mode.to_vec(), vec![0.0; mode.len()], (0.1 * med).sqrt())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn d(&self) -> f64 {
        self.log_d.exp()
    }

    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        let b = DVector::from_column_slice(&self.b);
        let n = self.dim();
        &b * b.transpose() + nalgebra::DMatrix::identity(n, n) * self.d().powi(2)
    }

    /// φ = μ + B z₁ + d z₂
    pub fn transform(&self, z1: f64, z2: &[f64]) -> Vec<f64> {
        let d = self.d();
        (0..self.dim()).map(|i| self.mu[i] + self.b[i] * z1 + d * z2[i]).collect()
    }

    /// (z₁, z₂, φ) with φ ~ q.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<f64>, Vec<f64>) {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let phi = self.transform(z1, &z2);
        (z1, z2, phi)
    }

    /// log q(φ), using Σ⁻¹ = (I − BBᵀ/(d² + BᵀB))/d².
    pub fn log_q(&self, phi: &[f64]) -> f64 {
        let d2 = self.d().powi(2);
        let btb: f64 = self.b.iter().map(|v| v * v).sum();
        let r: Vec<f64> = phi.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let rb: f64 = r.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        let quad = (rr - rb * rb / (d2 + btb)) / d2;
        -0.5 * self.dim() as f64 * LN_2PI - (entropy(self) - 0.5 * self.dim() as f64 * (1.0 + LN_2PI)) - 0.5 * quad
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.b);
        v.push(self.log_d);
        v
    }

    fn unflatten(n: usize, v: &[f64]) -> Self {
        VariationalState { mu: v[..n].to_vec(), b: v[n..2 * n].to_vec(), log_d: v[2 * n] }
    }
}

/// ½n ln(2πe) + (n−1) ln d + ½ ln(d² + BᵀB)
pub fn entropy(state: &VariationalState) -> f64 {
    let n = state.dim() as f64;
    let btb: f64 = state.b.iter().map(|v| v * v).sum();
    0.5 * n * (1.0 + LN_2PI) + (n - 1.0) * state.log_d + 0.5 * (state.d().powi(2) + btb).ln()
}

/// ∇ log p(φ) estimate with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub grad: DVector<f64>,
    pub u_max: usize,
    pub steps: usize,
}

/// Supplies (possibly subsampled) unbiased gradients of the log posterior.
/// `Ok(None)` marks a φ outside the support.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;
    fn gradient<R: Rng + ?Sized>(&self, phi: &[f64], rng: &mut R) -> Result<Option<GradientSample>>;
}

pub struct FullGradient<'a, D: LogDensity + ?Sized> {
    pub density: &'a D,
    pub t_len: usize,
}

impl<D: LogDensity + ?Sized> GradientOracle for FullGradient<'_, D> {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn gradient<R: Rng + ?Sized>(&self, phi: &[f64], _rng: &mut R) -> Result<Option<GradientSample>> {
        Ok(self.density.log_density_grad(phi).map(|(_, grad)| GradientSample { grad, u_max: self.t_len, steps: self.t_len }))
    }
}

pub struct SubsampledGradient<'a, M: TermModel + ?Sized, P: LogPrior + ?Sized> {
    pub model: &'a M,
    pub prior: &'a P,
    pub cache: &'a ControlVariateCache,
    pub scheme: &'a SamplingScheme,
    pub m: usize,
}

impl<M: TermModel + ?Sized, P: LogPrior + ?Sized> GradientOracle for SubsampledGradient<'_, M, P> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn gradient<R: Rng + ?Sized>(&self, phi: &[f64], rng: &mut R) -> Result<Option<GradientSample>> {
        let sub = self.scheme.draw_indices(self.m, rng);
        let Some((_, gp)) = self.prior.log_prior_grad(phi) else { return Ok(None) };
        match wde_grad(self.model, self.cache, self.scheme, phi, &sub) {
            Ok(g) => Ok(Some(GradientSample { grad: g.value + gp, u_max: g.u_max, steps: g.steps })),
            Err(e) if e.is_rejection() => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Reparameterised ELBO gradient in (μ, B, log d) at fixed (z₁, z₂) given g = ∇ log p(φ).
pub fn elbo_gradient(state: &VariationalState, z1: f64, z2: &[f64], g: &DVector<f64>) -> Vec<f64> {
    let n = state.dim();
    let d = state.d();
    let btb: f64 = state.b.iter().map(|v| v * v).sum();
    let denom = d * d + btb;
    let mut out = Vec::with_capacity(2 * n + 1);
    out.extend(g.iter().copied());
    out.extend((0..n).map(|i| g[i] * z1 + state.b[i] / denom));
    let gz: f64 = g.iter().zip(z2).map(|(a, b)| a * b).sum();
    out.push(d * gz + (n as f64 - 1.0) + d * d / denom);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboPoint {
    pub iteration: usize,
    pub value: f64,
    pub se: f64,
}

fn elbo_with_rng<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    state: &VariationalState,
    density: &D,
    n_draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    let vals: Vec<f64> = (0..n_draws)
        .map(|_| {
            let (_, _, phi) = state.draw(rng);
            density.log_density(&phi) - state.log_q(&phi)
        })
        .collect();
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Monte Carlo ELBO, E_q[log p(φ) − log q(φ)], with its standard error.
pub fn elbo_estimate<D: LogDensity + ?Sized>(state: &VariationalState, density: &D, n_draws: usize, seed: u64) -> Result<(f64, f64)> {
    if n_draws < 2 {
        return Err(Error::Domain("ELBO estimate needs at least two draws".into()));
    }
    Ok(elbo_with_rng(state, density, n_draws, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbSettings {
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub polyak_window: usize,
    pub monitor_interval: usize,
    pub monitor_draws: usize,
    /// Keep B at its initial value (the d-only family when B starts at 0).
    pub freeze_b: bool,
}

impl Default for VbSettings {
    fn default() -> Self {
        VbSettings {
            iterations: 5_000,
            seed: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            polyak_window: 500,
            monitor_interval: 25,
            monitor_draws: 5,
            freeze_b: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbOutput {
    /// Polyak average of the final iterates.
    pub state: VariationalState,
    pub last: VariationalState,
    pub elbo_trace: Vec<ElboPoint>,
    /// Iterations whose draw fell outside the support and were skipped.
    pub skipped: usize,
    /// Σ u_max over the gradient evaluations (monitoring excluded).
    pub umax_total: usize,
    /// Draws whose gradient was evaluated, i.e. those inside the support.
    pub evaluations: usize,
    pub steps: usize,
    pub seconds: f64,
}

/// Adam ascent on the reparameterised ELBO, one draw per iteration.
///
/// Gradient draws use stream 0 of the seed, subsample indices stream 1 and ELBO monitoring
/// stream 2, so monitoring never perturbs the optimisation path.
pub fn vb_optimize<O: GradientOracle + ?Sized, D: LogDensity + ?Sized>(
    oracle: &O,
    monitor: &D,
    init: &VariationalState,
    settings: &VbSettings,
) -> Result<VbOutput> {
    let n = init.dim();
    if oracle.dim() != n {
        return Err(Error::DimensionMismatch { expected: oracle.dim(), got: n });
    }
    let start = Instant::now();
    let mut streams = [0u64, 1, 2].map(|s| {
        let mut r = ChaCha8Rng::seed_from_u64(settings.seed);
        r.set_stream(s);
        r
    });
    let [rz, ridx, rmon] = &mut streams;

    let mut x = init.flatten();
    let p = x.len();
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let window = settings.polyak_window.clamp(1, settings.iterations.max(1));
    let mut avg = vec![0.0; p];
    let mut out = VbOutput {
        state: init.clone(),
        last: init.clone(),
        elbo_trace: Vec::new(),
        skipped: 0,
        umax_total: 0,
        evaluations: 0,
        steps: 0,
        seconds: 0.0,
    };
    let mut t_adam = 0i32;

    for it in 0..settings.iterations {
        let state = VariationalState::unflatten(n, &x);
        let (z1, z2, phi) = state.draw(rz);
        if let Some(gs) = oracle.gradient(&phi, ridx)? {
            out.umax_total += gs.u_max;
            out.evaluations += 1;
            out.steps += gs.steps;
            let mut g = elbo_gradient(&state, z1, &z2, &gs.grad);
            if settings.freeze_b {
                g[n..2 * n].iter_mut().for_each(|v| *v = 0.0);
            }
            if g.iter().all(|v| v.is_finite()) {
                t_adam += 1;
                let (c1, c2) = (1.0 - settings.beta1.powi(t_adam), 1.0 - settings.beta2.powi(t_adam));
                for k in 0..p {
                    m1[k] = settings.beta1 * m1[k] + (1.0 - settings.beta1) * g[k];
                    m2[k] = settings.beta2 * m2[k] + (1.0 - settings.beta2) * g[k] * g[k];
                    x[k] += settings.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + settings.epsilon);
                }
            } else {
                out.skipped += 1;
            }
        } else {
            out.skipped += 1;
        }
        if it + window >= settings.iterations {
            avg.iter_mut().zip(&x).for_each(|(a, v)| *a += v / window as f64);
        }
        if settings.monitor_interval > 0 && (it + 1) % settings.monitor_interval == 0 {
            let s = VariationalState::unflatten(n, &x);
            let (value, se) = elbo_with_rng(&s, monitor, settings.monitor_draws.max(2), rmon);
            out.elbo_trace.push(ElboPoint { iteration: it + 1, value, se });
        }
    }
    out.last = VariationalState::unflatten(n, &x);
    out.state = if settings.iterations == 0 { init.clone() } else { VariationalState::unflatten(n, &avg) };
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Exponentially smoothed ELBO trace.
pub fn smooth_elbo(trace: &[ElboPoint], weight: f64) -> Vec<ElboPoint> {
    let mut out: Vec<ElboPoint> = Vec::with_capacity(trace.len());
    for p in trace {
        let next = match out.last() {
            None => *p,
            Some(prev) => ElboPoint {
                iteration: p.iteration,
                value: weight * p.value + (1.0 - weight) * prev.value,
                se: (weight * weight * p.se * p.se + (1.0 - weight).powi(2) * prev.se * prev.se).sqrt(),
            },
        };
        out.push(next);
    }
    out
}

/// Whether the smoothed trace over the final `tail` fraction never drops by more than
/// `tolerance` combined standard errors between consecutive points.
pub fn elbo_non_decreasing(trace: &[ElboPoint], tail: f64, tolerance: f64) -> bool {
    let s = smooth_elbo(trace, 0.5);
    let from = ((1.0 - tail) * s.len() as f64).floor() as usize;
    s[from.min(s.len())..].windows(2).all(|w| {
        let se = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        w[1].value >= w[0].value - tolerance * se
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::GaussianDensity;

    #[test]
    fn isotropic_entropy_is_closed_form() {
        let s = VariationalState::new(vec![0.0; 4], vec![0.0; 4], 0.7).unwrap();
        let closed = 0.5 * 4.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 0.49).ln();
        assert!((entropy(&s) - closed).abs() < 1e-9);
    }

    #[test]
    fn log_q_matches_dense_gaussian() {
        let s = VariationalState::new(vec![0.5, -1.0, 2.0], vec![0.3, -0.2, 0.9], 0.4).unwrap();
        let dense = GaussianDensity::new(s.mu.clone(), s.covariance()).unwrap();
        let phi = [0.1, 0.2, 1.5];
        assert!((s.log_q(&phi) - dense.log_density(&phi)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // objective at fixed draws: log p(φ(λ)) + H(λ)
        let target = GaussianDensity::new(
            vec![1.0, 0.0, -1.0],
            nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 2.0]),
        )
        .unwrap();
        let s = VariationalState::new(vec![0.2, 0.1, -0.3], vec![0.4, -0.1, 0.2], 0.6).unwrap();
        let (z1, z2) = (0.7, vec![-0.3, 1.1, 0.4]);
        let obj = |st: &VariationalState| target.log_density(&st.transform(z1, &z2)) + entropy(st);
        let (_, g) = target.log_density_grad(&s.transform(z1, &z2)).unwrap();
        let analytic = elbo_gradient(&s, z1, &z2, &g);
        let x = s.flatten();
        for k in 0..x.len() {
            let h = 1e-6;
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (obj(&VariationalState::unflatten(3, &a)) - obj(&VariationalState::unflatten(3, &b))) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()), "slot {k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn exact_q_gives_exact_elbo() {
        let s = VariationalState::new(vec![0.5, 1.0], vec![0.0, 0.0], 0.8).unwrap();
        let target = GaussianDensity::new(s.mu.clone(), s.covariance()).unwrap();
        let (v, se) = elbo_estimate(&s, &target, 20, 4).unwrap();
        assert!(v.abs() < 1e-10 && se < 1e-10);
        assert_eq!(elbo_estimate(&s, &target, 2, 9).unwrap(), elbo_estimate(&s, &target, 2, 9).unwrap());
    }

    #[test]
    fn polyak_average_of_constant_sequence() {
        struct Zero;
        impl GradientOracle for Zero {
            fn dim(&self) -> usize {
                2
            }
            fn gradient<R: Rng + ?Sized>(&self, _: &[f64], _: &mut R) -> Result<Option<GradientSample>> {
                Ok(None)
            }
        }
        let init = VariationalState::new(vec![0.3, -0.2], vec![0.1, 0.0], 0.5).unwrap();
        let s = VbSettings { iterations: 700, ..Default::default() };
        let out = vb_optimize(&Zero, &GaussianDensity::standard(2), &init, &s).unwrap();
        for (a, b) in out.state.flatten().iter().zip(init.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.skipped, 700);
    }
}
