use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use super::{unconditional_variance, Layout, ModelSpec, PreSample};
use crate::error::{Error, Result};

/// Draw y_1..y_T from the model with unit-variance innovations. Deterministic in `seed`.
///
/// TGARCH uses the same logistic indicator as the likelihood.
pub fn simulate(spec: &ModelSpec, theta: &[f64], t_len: usize, presample: &PreSample, seed: u64) -> Result<Vec<f64>> {
    unconditional_variance(spec, theta)?;
    presample.check(spec)?;
    let l = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let student = match l.nu() {
        Some(k) => {
            let nu = theta[k];
            let dist = StudentT::new(nu).map_err(|e| Error::Domain(e.to_string()))?;
            Some((dist, ((nu - 2.0) / nu).sqrt()))
        }
        None => None,
    };
    let mu = theta[Layout::MU];
    let k = spec.logistic_steepness;

    // newest first
    let mut y_lags = presample.y_init.clone();
    let mut s2_lags = presample.sigma2_init.clone();
    let mut ys = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let mut s2 = theta[Layout::OMEGA];
        for i in 0..l.p {
            let z = y_lags[i] - mu;
            let mut coef = theta[l.alpha(i)];
            if l.has_gamma {
                coef += theta[l.gamma(i)] / (1.0 + (k * z).exp());
            }
            s2 += coef * z * z;
        }
        for j in 0..l.q {
            s2 += theta[l.beta(j)] * s2_lags[j];
        }
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::NonPositiveVariance { t, value: s2 });
        }
        let eps: f64 = match &student {
            Some((dist, scale)) => dist.sample(&mut rng) * scale,
            None => StandardNormal.sample(&mut rng),
        };
        let y = mu + s2.sqrt() * eps;
        ys.push(y);
        y_lags.rotate_right(1);
        y_lags[0] = y;
        s2_lags.rotate_right(1);
        s2_lags[0] = s2;
    }
    Ok(ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorLaw, Family};

    fn sample_var(y: &[f64]) -> f64 {
        let n = y.len() as f64;
        let m = y.iter().sum::<f64>() / n;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn iid_gaussian_variance() {
        let spec = ModelSpec::garch11();
        let pre = PreSample::constant(1, 1, 0.0, 1.0).unwrap();
        let y = simulate(&spec, &[0.0, 1.0, 0.0, 0.0], 1_000_000, &pre, 3).unwrap();
        assert!((sample_var(&y) - 1.0).abs() < 0.01);
    }

    #[test]
    fn garch_variance_matches_unconditional() {
        let spec = ModelSpec::garch11();
        let pre = PreSample::constant(1, 1, 0.0, 1.0).unwrap();
        let y = simulate(&spec, &[0.0, 0.1, 0.1, 0.8], 1_000_000, &pre, 11).unwrap();
        assert!((sample_var(&y) - 1.0).abs() < 0.05);
    }

    #[test]
    fn student_t_innovations_have_unit_variance() {
        let spec = ModelSpec::new(Family::Garch, 1, 1, ErrorLaw::StudentT).unwrap();
        let pre = PreSample::constant(1, 1, 0.0, 1.0).unwrap();
        let y = simulate(&spec, &[0.0, 1.0, 0.0, 0.0, 8.0], 400_000, &pre, 5).unwrap();
        assert!((sample_var(&y) - 1.0).abs() < 0.03);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = ModelSpec::garch11();
        let pre = PreSample::constant(1, 1, 0.0, 1.0).unwrap();
        let a = simulate(&spec, &[0.0, 0.1, 0.1, 0.8], 500, &pre, 42).unwrap();
        let b = simulate(&spec, &[0.0, 0.1, 0.1, 0.8], 500, &pre, 42).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn non_stationary_rejected() {
        let spec = ModelSpec::garch11();
        let pre = PreSample::constant(1, 1, 0.0, 1.0).unwrap();
        assert!(matches!(simulate(&spec, &[0.0, 0.1, 0.5, 0.6], 10, &pre, 0), Err(Error::NonStationary { .. })));
    }
}
