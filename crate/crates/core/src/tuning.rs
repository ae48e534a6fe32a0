//! Expected recursion cost and the constrained (c, m) tuner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{exact_variance, ControlVariateCache};
use crate::model::TermModel;
use crate::scheme::{gamma_max, tail_mass, SamplingScheme, SchemeSpec};

/// E(u_max) = T − Σ_k F_{k−1}^m, with F the cumulative probabilities.
///
/// F_{k−1} is taken as 1 − (suffix mass from k) and powered in log space, which keeps
/// precision when F is close to one.
pub fn expected_umax(probs: &[f64], m: usize) -> f64 {
    let t_len = probs.len();
    let mut suffix = 0.0;
    let mut acc = 0.0;
    for k in (2..=t_len).rev() {
        suffix += probs[k - 1];
        let f = (-suffix).max(-1.0);
        acc += (m as f64 * f.ln_1p()).exp();
    }
    t_len as f64 - acc
}

/// t★ + (T − t★)(1 − (1 − ε)^m)
pub fn expected_umax_bound(t_star: usize, t_len: usize, epsilon: f64, m: usize) -> f64 {
    let miss = -(m as f64 * (-epsilon).ln_1p()).exp_m1();
    t_star as f64 + (t_len - t_star) as f64 * miss
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub expected_umax: f64,
    pub bound: Option<f64>,
    pub m: usize,
}

pub fn cost_profile(scheme: &SamplingScheme, m: usize) -> CostProfile {
    let bound = scheme.tail_mass().map(|eps| expected_umax_bound(scheme.head_len(), scheme.len(), eps, m));
    CostProfile { expected_umax: expected_umax(scheme.probs(), m), bound, m }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub v: f64,
    pub index: usize,
    pub candidates: Vec<f64>,
}

/// V = lower median of V^(j) = R_max σ²_j / reference_m; j† is the candidate closest to V (lowest index on ties).
pub fn calibrate_from_variances(sigma2_uniform: &[f64], r_max: f64, reference_m: usize) -> Result<Calibration> {
    if sigma2_uniform.is_empty() {
        return Err(Error::Domain("calibration needs at least one pilot draw".into()));
    }
    if !(r_max >= 1.0) || reference_m == 0 {
        return Err(Error::Domain(format!("need R_max >= 1 and a positive reference m, got {r_max}, {reference_m}")));
    }
    let candidates: Vec<f64> = sigma2_uniform.iter().map(|s| r_max * s / reference_m as f64).collect();
    let mut sorted = candidates.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let v = sorted[(sorted.len() - 1) / 2];
    let mut index = 0;
    let mut best = f64::INFINITY;
    for (j, c) in candidates.iter().enumerate() {
        let d = (c - v).abs();
        if d < best {
            best = d;
            index = j;
        }
    }
    Ok(Calibration { v, index, candidates })
}

/// Variance tolerance and tuning reference from pilot draws, via uniform-sampling residual variances.
pub fn calibrate_tolerance<M: TermModel + ?Sized>(
    model: &M,
    cache: &ControlVariateCache,
    pilot_draws: &[Vec<f64>],
    r_max: f64,
    reference_m: usize,
) -> Result<(Calibration, Vec<f64>)> {
    let uniform = vec![1.0 / cache.len() as f64; cache.len()];
    let mut sig = Vec::with_capacity(pilot_draws.len());
    for phi in pilot_draws {
        let e = cache.residuals(model, phi)?;
        sig.push(exact_variance(&e, &uniform, 1)?);
    }
    let cal = calibrate_from_variances(&sig, r_max, reference_m)?;
    let phi_dagger = pilot_draws[cal.index].clone();
    Ok((cal, phi_dagger))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    VarianceConstraint,
    SafeguardBound,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub c_star: f64,
    pub m_star: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub v: f64,
    pub expected_umax: f64,
    pub phi_dagger: Vec<f64>,
    pub binding: Binding,
    pub c_min: f64,
    pub t_star: usize,
    pub b: f64,
    pub t_len: usize,
    /// σ²(c★; φ†), so that σ²/m★ ≤ V.
    pub sigma2: f64,
    /// E(u_max)·σ²/m★, reported only.
    pub cost_variance_product: f64,
}

impl TuningResult {
    pub fn scheme_spec(&self) -> SchemeSpec {
        SchemeSpec::tpd(self.gamma, self.t_star, self.b, self.t_len)
    }

    pub fn scheme(&self) -> Result<SamplingScheme> {
        SamplingScheme::build(self.scheme_spec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub t_star: usize,
    pub b: f64,
    pub r_max: f64,
    pub m_floor: usize,
    pub grid_points: usize,
    /// Pin c = 1 (uniform sampling); R_max still scales the tolerance.
    pub uniform: bool,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings { t_star: 1000, b: 100.0, r_max: 100.0, m_floor: 2, grid_points: 60, uniform: false }
    }
}

/// One evaluated candidate of the reduced problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub sigma2: f64,
    /// ⌈σ²/V⌉ before the floor is applied.
    pub m_v: usize,
    pub m: usize,
    pub cost: f64,
    pub feasible: bool,
}

/// Evaluate the reduced objective E(u_max; c, m_V(c) ∨ m_floor) at one c.
pub fn evaluate_candidate(c: f64, settings: &TuneSettings, t_len: usize, v: f64, residuals: &[f64]) -> Result<Candidate> {
    let gamma = gamma_max(c, settings.t_star, settings.b, t_len)?;
    let scheme = SamplingScheme::build(SchemeSpec::tpd(gamma, settings.t_star, settings.b, t_len))?;
    let epsilon = tail_mass(gamma, settings.t_star, settings.b, t_len)?;
    let sigma2 = exact_variance(residuals, scheme.probs(), 1)?;
    let feasible = sigma2 <= v * t_len as f64;
    let ratio = if v > 0.0 {
        sigma2 / v
    } else if sigma2 == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let m_v = if ratio.is_finite() { (ratio.ceil() as usize).max(1) } else { usize::MAX };
    let m = m_v.max(settings.m_floor).min(t_len);
    let cost = if feasible { expected_umax(scheme.probs(), m) } else { f64::INFINITY };
    Ok(Candidate { c, gamma, epsilon, sigma2, m_v, m, cost, feasible })
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    a.cost < b.cost || (a.cost == b.cost && a.c < b.c)
}

/// Minimise E(u_max) over c ∈ [1/R_max, 1] with m = m_V(c) ∨ m_floor.
///
/// Geometric grid, then golden-section refinement inside the bracket of the best grid point.
pub fn tune(settings: &TuneSettings, t_len: usize, v: f64, residuals: &[f64], phi_dagger: Vec<f64>) -> Result<TuningResult> {
    if residuals.len() != t_len {
        return Err(Error::DimensionMismatch { expected: t_len, got: residuals.len() });
    }
    if !(settings.r_max >= 1.0) {
        return Err(Error::Domain(format!("R_max must be at least 1, got {}", settings.r_max)));
    }
    if !(1..=2).contains(&settings.m_floor) {
        return Err(Error::Domain("m_floor must be 1 or 2".into()));
    }
    let c_min = if settings.uniform { 1.0 } else { 1.0 / settings.r_max };
    let grid = c_grid(c_min, settings.grid_points.max(2));
    let mut evaluated = Vec::with_capacity(grid.len() + 40);
    for &c in &grid {
        evaluated.push(evaluate_candidate(c, settings, t_len, v, residuals)?);
    }
    let best_k = (0..evaluated.len()).fold(0, |k, i| if better(&evaluated[i], &evaluated[k]) { i } else { k });
    if !evaluated[best_k].feasible {
        return Err(Error::Infeasible);
    }

    if grid.len() > 1 {
        let lo = grid[best_k.saturating_sub(1)];
        let hi = grid[(best_k + 1).min(grid.len() - 1)];
        golden_section(lo, hi, 30, |c| {
            let cand = evaluate_candidate(c, settings, t_len, v, residuals)?;
            let cost = cand.cost;
            evaluated.push(cand);
            Ok(cost)
        })?;
    }

    let best = evaluated.iter().copied().fold(evaluated[best_k], |acc, c| if better(&c, &acc) { c } else { acc });
    let binding = if best.c <= c_min * (1.0 + 1e-12) {
        Binding::SafeguardBound
    } else if best.m == best.m_v {
        Binding::VarianceConstraint
    } else {
        Binding::None
    };
    Ok(TuningResult {
        c_star: best.c,
        m_star: best.m,
        gamma: best.gamma,
        epsilon: best.epsilon,
        v,
        expected_umax: best.cost,
        phi_dagger,
        binding,
        c_min,
        t_star: settings.t_star,
        b: settings.b,
        t_len,
        sigma2: best.sigma2,
        cost_variance_product: best.cost * best.sigma2 / best.m as f64,
    })
}

/// n geometrically spaced points from c_min to 1 inclusive.
pub fn c_grid(c_min: f64, n: usize) -> Vec<f64> {
    if c_min >= 1.0 {
        return vec![1.0];
    }
    let ratio = (1.0 / c_min).ln();
    let mut g: Vec<f64> = (0..n).map(|k| c_min * (ratio * k as f64 / (n - 1) as f64).exp()).collect();
    g[0] = c_min;
    g[n - 1] = 1.0;
    g
}

fn golden_section<F: FnMut(f64) -> Result<f64>>(mut a: f64, mut b: f64, iters: usize, mut f: F) -> Result<()> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(())
}
