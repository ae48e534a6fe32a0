//! Index-sampling probabilities: uniform, power-law, exponential and truncated power-law (TPD).

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind {
    Uniform,
    PowerLaw { lambda: f64 },
    Exponential { kappa: f64 },
    Tpd { gamma: f64, t_star: usize, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    #[serde(flatten)]
    pub kind: SchemeKind,
    pub t_len: usize,
}

impl SchemeSpec {
    pub fn uniform(t_len: usize) -> Self {
        SchemeSpec { kind: SchemeKind::Uniform, t_len }
    }

    pub fn tpd(gamma: f64, t_star: usize, b: f64, t_len: usize) -> Self {
        SchemeSpec { kind: SchemeKind::Tpd { gamma, t_star, b }, t_len }
    }
}

/// A normalised probability vector over t = 1..=T with an alias table for O(1) draws.
#[derive(Debug, Clone)]
pub struct SamplingScheme {
    probs: Vec<f64>,
    head_len: usize,
    tail_mass: Option<f64>,
    spec: Option<SchemeSpec>,
    alias: WeightedAliasIndex<f64>,
}

/// Indices are 1-based time points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub indices: Vec<usize>,
    pub u_max: usize,
}

/// log of the head weight ((j+b)/(1+b))^{-γ}, normalised so that j = 1 has weight one.
#[inline]
fn log_head_weight(j: usize, gamma: f64, b: f64) -> f64 {
    -gamma * ((j as f64 + b) / (1.0 + b)).ln()
}

fn check_tpd(gamma: f64, t_star: usize, b: f64, t_len: usize) -> Result<()> {
    if !(t_star >= 1 && t_star < t_len) {
        return Err(Error::Domain(format!("need 1 <= t_star < T, got t_star={t_star}, T={t_len}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("decay rate must be a finite non-negative number, got {gamma}")));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("offset b must be non-negative, got {b}")));
    }
    Ok(())
}

/// (tail weight A, head sum S) on the j = 1 normalised scale.
fn tpd_masses(gamma: f64, t_star: usize, b: f64, t_len: usize) -> (f64, f64) {
    let head: f64 = (1..=t_star).map(|j| log_head_weight(j, gamma, b).exp()).sum();
    let tail = log_head_weight(t_star, gamma, b).exp() * (t_len - t_star) as f64;
    (tail, head)
}

/// ε(γ): total tail probability of the TPD scheme, fixed by p_{t★} = p_{t★+1}.
pub fn tail_mass(gamma: f64, t_star: usize, b: f64, t_len: usize) -> Result<f64> {
    check_tpd(gamma, t_star, b, t_len)?;
    if gamma == 0.0 {
        return Ok((t_len - t_star) as f64 / t_len as f64);
    }
    let (a, s) = tpd_masses(gamma, t_star, b, t_len);
    Ok(a / (a + s))
}

/// Largest decay rate whose per-element tail probability is at least c/T.
///
/// Bisection on γ; the returned point sits on the feasible side of the root, within 1e-10 in ε.
pub fn gamma_max(c: f64, t_star: usize, b: f64, t_len: usize) -> Result<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Domain(format!("floor fraction c must lie in (0, 1], got {c}")));
    }
    check_tpd(0.0, t_star, b, t_len)?;
    if t_star < 2 {
        return Err(Error::Domain("TPD decay needs t_star >= 2".into()));
    }
    if c == 1.0 {
        return Ok(0.0);
    }
    let target = c * (t_len - t_star) as f64 / t_len as f64;
    let eps = |g: f64| tail_mass(g, t_star, b, t_len);

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut e_hi = eps(hi)?;
    let mut doublings = 0;
    while e_hi >= target {
        lo = hi;
        hi *= 2.0;
        e_hi = eps(hi)?;
        doublings += 1;
        if doublings > 200 || !hi.is_finite() {
            return Err(Error::BracketFailure(format!("no decay rate reaches tail mass {target:e}")));
        }
    }
    let mut e_lo = eps(lo)?;
    for _ in 0..400 {
        if e_lo - e_hi <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let e_mid = eps(mid)?;
        if e_mid >= target {
            lo = mid;
            e_lo = e_mid;
        } else {
            hi = mid;
            e_hi = e_mid;
        }
    }
    Ok(lo)
}

fn normalise_log(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn alias_for(probs: &[f64]) -> Result<WeightedAliasIndex<f64>> {
    WeightedAliasIndex::new(probs.to_vec()).map_err(|e| Error::Domain(format!("cannot build alias table: {e}")))
}

impl SamplingScheme {
    pub fn build(spec: SchemeSpec) -> Result<Self> {
        let t_len = spec.t_len;
        if t_len == 0 {
            return Err(Error::EmptySeries);
        }
        let (probs, head_len, tail_mass_v) = match spec.kind {
            SchemeKind::Uniform => (vec![1.0 / t_len as f64; t_len], 0, None),
            SchemeKind::PowerLaw { lambda } => {
                if !(lambda > 1.0) {
                    return Err(Error::Domain(format!("power-law exponent must exceed 1, got {lambda}")));
                }
                let logw: Vec<f64> = (1..=t_len).map(|t| -lambda * (t as f64).ln()).collect();
                (normalise_log(&logw), 0, None)
            }
            SchemeKind::Exponential { kappa } => {
                if !(kappa > 0.0) {
                    return Err(Error::Domain(format!("exponential rate must be positive, got {kappa}")));
                }
                let logw: Vec<f64> = (1..=t_len).map(|t| -kappa * (t - 1) as f64).collect();
                (normalise_log(&logw), 0, None)
            }
            SchemeKind::Tpd { gamma, t_star, b } => {
                check_tpd(gamma, t_star, b, t_len)?;
                if t_star < 2 {
                    return Err(Error::Domain("TPD scheme needs t_star >= 2".into()));
                }
                let eps = tail_mass(gamma, t_star, b, t_len)?;
                let probs = if gamma == 0.0 {
                    vec![1.0 / t_len as f64; t_len]
                } else {
                    let (a, s) = tpd_masses(gamma, t_star, b, t_len);
                    let denom = a + s;
                    let tail_p = (a / denom) / (t_len - t_star) as f64;
                    let mut p: Vec<f64> = (1..=t_star).map(|j| log_head_weight(j, gamma, b).exp() / denom).collect();
                    p.resize(t_len, tail_p);
                    p
                };
                (probs, t_star, Some(eps))
            }
        };
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Domain("scheme produced a zero probability; decay is too aggressive".into()));
        }
        let alias = alias_for(&probs)?;
        Ok(SamplingScheme { probs, head_len, tail_mass: tail_mass_v, spec: Some(spec), alias })
    }

    /// Scheme from arbitrary non-negative weights (normalised here). Zero weights are allowed.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptySeries);
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        let probs: Vec<f64> = weights.into_iter().map(|w| w / s).collect();
        let alias = alias_for(&probs)?;
        Ok(SamplingScheme { probs, head_len: 0, tail_mass: None, spec: None, alias })
    }

    pub fn uniform(t_len: usize) -> Result<Self> {
        Self::build(SchemeSpec::uniform(t_len))
    }

    /// TPD scheme at γ_max(c).
    pub fn tpd_for_floor(c: f64, t_star: usize, b: f64, t_len: usize) -> Result<Self> {
        let gamma = gamma_max(c, t_star, b, t_len)?;
        Self::build(SchemeSpec::tpd(gamma, t_star, b, t_len))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// p_t for a 1-based index.
    pub fn prob(&self, t: usize) -> f64 {
        self.probs[t - 1]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn head_len(&self) -> usize {
        self.head_len
    }

    pub fn tail_mass(&self) -> Option<f64> {
        self.tail_mass
    }

    pub fn spec(&self) -> Option<&SchemeSpec> {
        self.spec.as_ref()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.alias.sample(rng) + 1
    }

    /// m i.i.d. draws with replacement.
    pub fn draw_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Subsample {
        let indices: Vec<usize> = (0..m).map(|_| self.draw(rng)).collect();
        let u_max = indices.iter().copied().max().unwrap_or(0);
        Subsample { indices, u_max }
    }
}

pub fn draw_indices<R: Rng + ?Sized>(scheme: &SamplingScheme, m: usize, rng: &mut R) -> Subsample {
    scheme.draw_indices(m, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tail_mass_hand_values() {
        assert!((tail_mass(0.0, 10, 0.0, 30).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((tail_mass(1.0, 3, 0.0, 6).unwrap() - 6.0 / 17.0).abs() < 1e-14);
        let big = tail_mass(50.0, 10, 0.0, 30).unwrap();
        assert!(big < 1e-40 && big > 0.0);
    }

    #[test]
    fn tpd_gamma_zero_is_uniform() {
        let s = SamplingScheme::build(SchemeSpec::tpd(0.0, 10, 0.0, 30)).unwrap();
        assert!(s.probs().iter().all(|&p| p == 1.0 / 30.0));
    }

    #[test]
    fn power_law_normalisation() {
        let s = SamplingScheme::build(SchemeSpec { kind: SchemeKind::PowerLaw { lambda: 2.0 }, t_len: 3 }).unwrap();
        assert!((s.prob(1) - 36.0 / 49.0).abs() < 1e-15);
        assert!((s.prob(3) - 4.0 / 49.0).abs() < 1e-15);
    }

    #[test]
    fn head_meets_tail() {
        let s = SamplingScheme::build(SchemeSpec::tpd(1.3, 10, 2.0, 30)).unwrap();
        let eps = s.tail_mass().unwrap();
        assert!((s.prob(10) - s.prob(11)).abs() < 1e-15);
        assert!((s.prob(11) - eps / 20.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_max_hits_target() {
        assert_eq!(gamma_max(1.0, 3, 0.0, 6).unwrap(), 0.0);
        let g = gamma_max(0.5, 3, 0.0, 6).unwrap();
        let e = tail_mass(g, 3, 0.0, 6).unwrap();
        assert!(e >= 0.25 && e - 0.25 < 1e-9);
    }

    #[test]
    fn degenerate_draws() {
        let s = SamplingScheme::from_weights(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = s.draw_indices(50, &mut rng);
        assert!(sub.indices.iter().all(|&u| u == 1));
        assert_eq!(sub.u_max, 1);
    }

    #[test]
    fn huge_decay_rates_stay_finite() {
        let s = SamplingScheme::build(SchemeSpec::tpd(100.0, 1000, 0.0, 5000)).unwrap_or_else(|e| panic!("{e}"));
        let total: f64 = s.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn domain_checks() {
        assert!(tail_mass(1.0, 30, 0.0, 30).is_err());
        assert!(SamplingScheme::build(SchemeSpec { kind: SchemeKind::PowerLaw { lambda: 1.0 }, t_len: 3 }).is_err());
        assert!(gamma_max(0.0, 3, 0.0, 6).is_err());
    }
}
