use statrs::function::gamma::{digamma, ln_gamma};

use super::ErrorLaw;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const HALF_LN_PI: f64 = 0.572_364_942_924_700_1;

/// Log-density ℓ of one observation and its partials in (μ, s = σ², ν).
/// The ν-fields are zero for the Gaussian law.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityPartials {
    pub ell: f64,
    pub d_mu: f64,
    pub d_s: f64,
    pub d_nu: f64,
    pub d_mumu: f64,
    pub d_ss: f64,
    pub d_smu: f64,
    pub d_nunu: f64,
    pub d_numu: f64,
    pub d_nus: f64,
}

/// Trigamma ψ₁(x) for x > 0: recurrence up to x ≥ 10, then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

/// `second` skips the second-order partials when only values and gradients are needed.
pub fn error_logdensity_partials(law: ErrorLaw, y: f64, mu: f64, s: f64, nu: Option<f64>, second: bool) -> Result<DensityPartials> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("variance must be positive, got {s}")));
    }
    let r = y - mu;
    match law {
        ErrorLaw::Normal => {
            let mut out = DensityPartials {
                ell: -HALF_LN_2PI - 0.5 * s.ln() - 0.5 * r * r / s,
                d_mu: r / s,
                d_s: -0.5 / s + 0.5 * r * r / (s * s),
                ..Default::default()
            };
            if second {
                out.d_mumu = -1.0 / s;
                out.d_ss = 0.5 / (s * s) - r * r / (s * s * s);
                out.d_smu = -r / (s * s);
            }
            Ok(out)
        }
        ErrorLaw::StudentT => {
            let nu = nu.ok_or_else(|| Error::Domain("Student-t law needs nu".into()))?;
            if !(nu > 2.0) || !nu.is_finite() {
                return Err(Error::Domain(format!("nu must exceed 2, got {nu}")));
            }
            let n = nu - 2.0;
            let d = s * n + r * r;
            let a = nu + 1.0;
            let ell = ln_gamma(0.5 * a) - ln_gamma(0.5 * nu) - HALF_LN_PI + 0.5 * nu * n.ln() + 0.5 * nu * s.ln() - 0.5 * a * d.ln();
            let mut out = DensityPartials {
                ell,
                d_mu: a * r / d,
                d_s: 0.5 * nu / s - 0.5 * a * n / d,
                d_nu: 0.5 * digamma(0.5 * a) - 0.5 * digamma(0.5 * nu) + 0.5 * n.ln() + 0.5 * nu / n + 0.5 * s.ln()
                    - 0.5 * d.ln()
                    - 0.5 * a * s / d,
                ..Default::default()
            };
            if second {
                let d2 = d * d;
                out.d_mumu = a * (2.0 * r * r - d) / d2;
                out.d_ss = -0.5 * nu / (s * s) + 0.5 * a * n * n / d2;
                out.d_smu = -a * n * r / d2;
                out.d_nunu =
                    0.25 * trigamma(0.5 * a) - 0.25 * trigamma(0.5 * nu) + 1.0 / n - 0.5 * nu / (n * n) - s / d + 0.5 * a * s * s / d2;
                out.d_numu = r / d - a * s * r / d2;
                out.d_nus = 0.5 / s - 0.5 * n / d - 0.5 * a / d + 0.5 * a * s * n / d2;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ell(law: ErrorLaw, y: f64, mu: f64, s: f64, nu: f64) -> f64 {
        error_logdensity_partials(law, y, mu, s, Some(nu), false).unwrap().ell
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn gaussian_at_mode() {
        let d = error_logdensity_partials(ErrorLaw::Normal, 0.3, 0.3, 1.0, None, true).unwrap();
        assert!((d.ell + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert_eq!(d.d_mu, 0.0);
        assert_eq!(d.d_s, -0.5);
        let d = error_logdensity_partials(ErrorLaw::Normal, 1.0, 0.0, 1.0, None, true).unwrap();
        assert_eq!(d.d_mu, 1.0);
        assert_eq!(d.d_mumu, -1.0);
    }

    #[test]
    fn student_t_integrates_to_one_with_unit_variance() {
        let (nu, s) = (5.0, 2.0);
        let h = 1e-3;
        let (mut mass, mut var) = (0.0, 0.0);
        for i in -200_000..=200_000 {
            let y = i as f64 * h;
            let f = ell(ErrorLaw::StudentT, y, 0.0, s, nu).exp();
            mass += f * h;
            var += y * y * f * h;
        }
        assert!((mass - 1.0).abs() < 1e-4);
        assert!((var - s).abs() < 2e-2);
    }

    #[test]
    fn student_t_partials_match_finite_differences() {
        let (y, mu, s, nu) = (0.7, 0.0, 2.0, 5.0);
        let d = error_logdensity_partials(ErrorLaw::StudentT, y, mu, s, Some(nu), true).unwrap();
        let f = |mu: f64, s: f64, nu: f64| ell(ErrorLaw::StudentT, y, mu, s, nu);
        let h = 1e-5;
        let fd_mu = (f(mu + h, s, nu) - f(mu - h, s, nu)) / (2.0 * h);
        let fd_s = (f(mu, s + h, nu) - f(mu, s - h, nu)) / (2.0 * h);
        let fd_nu = (f(mu, s, nu + h) - f(mu, s, nu - h)) / (2.0 * h);
        assert!(close(d.d_mu, fd_mu, 1e-6));
        assert!(close(d.d_s, fd_s, 1e-6));
        assert!(close(d.d_nu, fd_nu, 1e-6));

        let g = |mu: f64, s: f64, nu: f64| error_logdensity_partials(ErrorLaw::StudentT, y, mu, s, Some(nu), false).unwrap();
        let h = 1e-5;
        let fd = |a: DensityPartials, b: DensityPartials, pick: fn(&DensityPartials) -> f64| (pick(&a) - pick(&b)) / (2.0 * h);
        assert!(close(d.d_mumu, fd(g(mu + h, s, nu), g(mu - h, s, nu), |p| p.d_mu), 1e-6));
        assert!(close(d.d_ss, fd(g(mu, s + h, nu), g(mu, s - h, nu), |p| p.d_s), 1e-6));
        assert!(close(d.d_smu, fd(g(mu + h, s, nu), g(mu - h, s, nu), |p| p.d_s), 1e-6));
        assert!(close(d.d_nunu, fd(g(mu, s, nu + h), g(mu, s, nu - h), |p| p.d_nu), 1e-6));
        assert!(close(d.d_numu, fd(g(mu + h, s, nu), g(mu - h, s, nu), |p| p.d_nu), 1e-6));
        assert!(close(d.d_nus, fd(g(mu, s + h, nu), g(mu, s - h, nu), |p| p.d_nu), 1e-6));
    }

    #[test]
    fn trigamma_reference_values() {
        // ψ₁(1) = π²/6, ψ₁(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        let x = 3.7;
        let h = 1e-5;
        let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
        assert!((trigamma(x) - fd).abs() < 1e-8);
    }

    #[test]
    fn domain_errors() {
        assert!(error_logdensity_partials(ErrorLaw::Normal, 0.0, 0.0, 0.0, None, false).is_err());
        assert!(error_logdensity_partials(ErrorLaw::StudentT, 0.0, 0.0, 1.0, Some(2.0), false).is_err());
    }
}
