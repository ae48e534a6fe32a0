use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Layout, ModelSpec, ReparamMap};

/// Unconstrained ψ-coordinates in which every point is a stationary, positive parameter.
///
/// With x_k = exp(ψ_k) over the α, γ, β slots and S = Σx_k:
/// α_i = x/(1+S), γ_i = 2x/(1+S), β_j = x/(1+S). μ, ω and ν keep their φ transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryMap {
    pub spec: ModelSpec,
    map: ReparamMap,
    layout: Layout,
}

impl StationaryMap {
    pub fn new(spec: ModelSpec) -> Self {
        StationaryMap { map: ReparamMap::for_spec(&spec), layout: spec.layout(), spec }
    }

    /// (index, weight c_k) of the persistence slots.
    fn slots(&self) -> Vec<(usize, f64)> {
        let l = &self.layout;
        let mut s: Vec<(usize, f64)> = (0..l.p).map(|i| (l.alpha(i), 1.0)).collect();
        if l.has_gamma {
            s.extend((0..l.p).map(|i| (l.gamma(i), 2.0)));
        }
        s.extend((0..l.q).map(|j| (l.beta(j), 1.0)));
        s
    }

    pub fn psi_to_theta(&self, psi: &[f64]) -> Vec<f64> {
        let slots = self.slots();
        let s: f64 = slots.iter().map(|&(k, _)| psi[k].exp()).sum();
        let mut theta = self.map.kinds.iter().zip(psi).map(|(t, &v)| t.to_theta(v)).collect::<Vec<_>>();
        for (k, c) in slots {
            theta[k] = c * psi[k].exp() / (1.0 + s);
        }
        theta
    }

    pub fn theta_to_psi(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.layout.check_theta(theta)?;
        let persistence = self.layout.persistence(theta);
        if persistence >= 1.0 {
            return Err(Error::NonStationary { persistence });
        }
        let one_plus_s = 1.0 / (1.0 - persistence);
        let mut psi = self.map.to_phi(theta)?;
        for (k, c) in self.slots() {
            if theta[k] <= 0.0 {
                return Err(Error::Domain(format!("coordinate {k} must be strictly positive for the stationary map")));
            }
            psi[k] = (theta[k] * one_plus_s / c).ln();
        }
        Ok(psi)
    }

    pub fn psi_to_phi(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.map.to_phi(&self.psi_to_theta(psi))
    }

    pub fn phi_to_psi(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.theta_to_psi(&self.map.to_theta(phi)?)
    }

    /// log |det ∂θ/∂ψ| = Σ ln c_k + Σ ψ_k − (n+1) ln(1+S) + [ψ_ω] + [ψ_ν]
    pub fn log_det_theta_psi(&self, psi: &[f64]) -> f64 {
        let slots = self.slots();
        let s: f64 = slots.iter().map(|&(k, _)| psi[k].exp()).sum();
        let mut v: f64 = slots.iter().map(|&(k, c)| c.ln() + psi[k]).sum();
        v -= (slots.len() as f64 + 1.0) * (1.0 + s).ln();
        v += psi[Layout::OMEGA];
        if let Some(k) = self.layout.nu() {
            v += psi[k];
        }
        v
    }

    /// log |det ∂φ/∂ψ| at ψ.
    pub fn log_det_phi_psi(&self, psi: &[f64]) -> Result<f64> {
        let phi = self.psi_to_phi(psi)?;
        Ok(self.log_det_theta_psi(psi) - self.map.log_jacobian(&phi))
    }

    /// Dense ∂θ/∂ψ.
    fn jacobian_theta_psi(&self, psi: &[f64]) -> DMatrix<f64> {
        let n = psi.len();
        let slots = self.slots();
        let s: f64 = slots.iter().map(|&(k, _)| psi[k].exp()).sum();
        let mut j = DMatrix::zeros(n, n);
        for (i, t) in self.map.kinds.iter().enumerate() {
            j[(i, i)] = t.derivs(psi[i]).0;
        }
        for &(k, c) in &slots {
            let xk = psi[k].exp();
            for &(l, _) in &slots {
                let xl = psi[l].exp();
                let delta = if k == l { xk / (1.0 + s) } else { 0.0 };
                j[(k, l)] = c * (delta - xk * xl / ((1.0 + s) * (1.0 + s)));
            }
        }
        j
    }

    /// ∂ψ/∂φ at φ, used to carry a φ-space covariance over to ψ.
    pub fn jacobian_psi_phi(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        let psi = self.phi_to_psi(phi)?;
        let jtp = self.jacobian_theta_psi(&psi);
        let jtf = DMatrix::from_diagonal(&DVector::from_iterator(phi.len(), self.map.kinds.iter().zip(phi).map(|(t, &v)| t.derivs(v).0)));
        let inv = jtp.try_inverse().ok_or_else(|| Error::Domain("stationary map Jacobian is singular".into()))?;
        Ok(inv * jtf)
    }
}

/// Gaussian random-walk step in ψ. Returns (ψ', φ', log |∂φ/∂ψ|(ψ') − log |∂φ/∂ψ|(ψ)).
pub fn stationary_constrained_propose<R: Rng + ?Sized>(
    map: &StationaryMap,
    psi: &[f64],
    chol: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let z = DVector::from_iterator(psi.len(), (0..psi.len()).map(|_| StandardNormal.sample(rng)));
    let step = chol * z;
    let psi_new: Vec<f64> = psi.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
    let phi_new = map.psi_to_phi(&psi_new)?;
    let ratio = map.log_det_phi_psi(&psi_new)? - map.log_det_phi_psi(psi)?;
    Ok((psi_new, phi_new, ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorLaw, Family};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example() {
        let spec = ModelSpec::new(Family::Garch, 2, 1, ErrorLaw::Normal).unwrap();
        let m = StationaryMap::new(spec);
        let psi = [0.0, 0.0, 0.0, 0.0, 2f64.ln()];
        let theta = m.psi_to_theta(&psi);
        assert!((theta[2] - 0.2).abs() < 1e-15);
        assert!((theta[3] - 0.2).abs() < 1e-15);
        assert!((theta[4] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let spec = ModelSpec::new(Family::Tgarch, 1, 2, ErrorLaw::StudentT).unwrap();
        let m = StationaryMap::new(spec);
        let theta = [0.02, 0.05, 0.04, 0.1, 0.5, 0.3, 7.0];
        let back = m.psi_to_theta(&m.theta_to_psi(&theta).unwrap());
        for (a, b) in theta.iter().zip(&back) {
            assert!(((a - b) / a).abs() < 1e-10);
        }
    }

    #[test]
    fn log_det_matches_finite_differences() {
        let spec = ModelSpec::new(Family::Tgarch, 1, 1, ErrorLaw::StudentT).unwrap();
        let m = StationaryMap::new(spec);
        let psi = [0.1, -1.0, -0.7, -1.6, 1.2, 1.5];
        let n = psi.len();
        let mut j = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = 1e-6;
            let mut a = psi.to_vec();
            let mut b = psi.to_vec();
            a[c] += h;
            b[c] -= h;
            let (ta, tb) = (m.psi_to_theta(&a), m.psi_to_theta(&b));
            for r in 0..n {
                j[(r, c)] = (ta[r] - tb[r]) / (2.0 * h);
            }
        }
        let fd = j.determinant().abs().ln();
        assert!((fd - m.log_det_theta_psi(&psi)).abs() < 1e-6);
        assert!((&j - m.jacobian_theta_psi(&psi)).amax() < 1e-7);
    }

    #[test]
    fn zero_step_is_identity() {
        let spec = ModelSpec::garch11();
        let m = StationaryMap::new(spec);
        let psi = m.theta_to_psi(&[0.0, 0.1, 0.1, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p2, _, r) = stationary_constrained_propose(&m, &psi, &DMatrix::zeros(4, 4), &mut rng).unwrap();
        assert_eq!(p2, psi);
        assert_eq!(r, 0.0);
    }
}
