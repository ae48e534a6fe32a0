use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::LogPrior;
use crate::model::{is_stationary, Layout, ModelSpec, ReparamMap};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Independent marginals on θ with a stationarity indicator (not renormalised).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub mu_sd: f64,
    pub omega_scale: f64,
    pub alpha_scale: f64,
    pub gamma_scale: f64,
    pub beta_scale: f64,
    /// ν − 2 ~ Gamma(shape, rate)
    pub nu_shape: f64,
    pub nu_rate: f64,
    /// Testing mode: log prior ≡ 0 everywhere, no indicator.
    pub flat: bool,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            mu_sd: 10.0,
            omega_scale: 1.0,
            alpha_scale: 0.2,
            gamma_scale: 0.2,
            beta_scale: 0.8,
            nu_shape: 2.0,
            nu_rate: 1.0,
            flat: false,
        }
    }
}

impl PriorSpec {
    pub fn flat() -> Self {
        PriorSpec { flat: true, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchPrior {
    pub spec: ModelSpec,
    pub prior: PriorSpec,
    map: ReparamMap,
}

impl GarchPrior {
    pub fn new(spec: ModelSpec, prior: PriorSpec) -> Self {
        GarchPrior { map: ReparamMap::for_spec(&spec), spec, prior }
    }

    fn scale_of(&self, l: &Layout, i: usize) -> f64 {
        if i == Layout::OMEGA {
            self.prior.omega_scale
        } else if i < 2 + l.p {
            self.prior.alpha_scale
        } else if l.has_gamma && i < 2 + 2 * l.p {
            self.prior.gamma_scale
        } else {
            self.prior.beta_scale
        }
    }

    /// Log prior density on θ.
    pub fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        if self.prior.flat {
            return 0.0;
        }
        let l = self.spec.layout();
        if l.check_theta(theta).is_err() || !is_stationary(&self.spec, theta) {
            return f64::NEG_INFINITY;
        }
        let mu = theta[Layout::MU];
        let s = self.prior.mu_sd;
        let mut lp = -0.5 * LN_2PI - s.ln() - 0.5 * mu * mu / (s * s);
        for i in 1..l.dim_v {
            lp += half_normal_ln(theta[i], self.scale_of(&l, i));
        }
        if let Some(k) = l.nu() {
            let x = theta[k] - 2.0;
            let (a, r) = (self.prior.nu_shape, self.prior.nu_rate);
            lp += a * r.ln() - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * x.ln() - r * x;
        }
        lp
    }
}

fn half_normal_ln(x: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - 0.5 * x * x / (scale * scale)
}

impl LogPrior for GarchPrior {
    fn log_prior(&self, phi: &[f64]) -> f64 {
        if self.prior.flat {
            return 0.0;
        }
        let Ok(theta) = self.map.to_theta(phi) else { return f64::NEG_INFINITY };
        let lp = self.log_prior_theta(&theta);
        if lp.is_finite() {
            lp + self.map.log_jacobian(phi)
        } else {
            lp
        }
    }

    fn log_prior_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)> {
        let n = phi.len();
        if self.prior.flat {
            return Some((0.0, DVector::zeros(n)));
        }
        let v = self.log_prior(phi);
        if !v.is_finite() {
            return None;
        }
        let theta = self.map.to_theta(phi).ok()?;
        let l = self.spec.layout();
        let mut g = DVector::zeros(n);
        g[Layout::MU] = -theta[Layout::MU] / (self.prior.mu_sd * self.prior.mu_sd);
        for i in 1..l.dim_v {
            // d/dφ of −θ²/(2s²) + φ with θ = e^φ
            let s = self.scale_of(&l, i);
            g[i] = -theta[i] * theta[i] / (s * s) + 1.0;
        }
        if let Some(k) = l.nu() {
            let x = theta[k] - 2.0;
            let (a, r) = (self.prior.nu_shape, self.prior.nu_rate);
            g[k] = (a - 1.0) - r * x + 1.0;
        }
        Some((v, g))
    }
}

/// log π ≡ 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatPrior {
    pub dim: usize,
}

impl LogPrior for FlatPrior {
    fn log_prior(&self, _phi: &[f64]) -> f64 {
        0.0
    }

    fn log_prior_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)> {
        Some((0.0, DVector::zeros(phi.len())))
    }
}

/// Isotropic Gaussian prior N(0, sd² I) directly on φ.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPrior {
    pub sd: f64,
}

impl LogPrior for GaussianPrior {
    fn log_prior(&self, phi: &[f64]) -> f64 {
        let n = phi.len() as f64;
        let ss: f64 = phi.iter().map(|v| v * v).sum();
        -0.5 * n * LN_2PI - n * self.sd.ln() - 0.5 * ss / (self.sd * self.sd)
    }

    fn log_prior_grad(&self, phi: &[f64]) -> Option<(f64, DVector<f64>)> {
        let g = DVector::from_iterator(phi.len(), phi.iter().map(|v| -v / (self.sd * self.sd)));
        Some((self.log_prior(phi), g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorLaw, Family};

    #[test]
    fn non_stationary_is_excluded() {
        let p = GarchPrior::new(ModelSpec::garch11(), PriorSpec::default());
        assert_eq!(p.log_prior_theta(&[0.0, 0.1, 0.3, 0.75]), f64::NEG_INFINITY);
        assert!(p.log_prior_theta(&[0.0, 0.1, 0.1, 0.8]).is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = ModelSpec::new(Family::Tgarch, 1, 1, ErrorLaw::StudentT).unwrap();
        let p = GarchPrior::new(spec, PriorSpec::default());
        let phi = ReparamMap::for_spec(&spec).to_phi(&[0.1, 0.2, 0.05, 0.1, 0.7, 6.0]).unwrap();
        let (_, g) = p.log_prior_grad(&phi).unwrap();
        for i in 0..phi.len() {
            let h = 1e-6;
            let mut a = phi.clone();
            let mut b = phi.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (p.log_prior(&a) - p.log_prior(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn half_normal_is_normalised() {
        let h = 1e-4;
        let mass: f64 = (0..200_000).map(|i| half_normal_ln((i as f64 + 0.5) * h, 0.8).exp() * h).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }
}
