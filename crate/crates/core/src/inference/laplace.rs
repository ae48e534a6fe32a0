use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::LogDensity;
use crate::error::{Error, Result};

/// Inverse negative Hessian at `phi_map`, from central differences of the analytic gradient.
///
/// Eigenvalues below 1e-8 of the largest are floored; more than 10% floored is an error.
pub fn laplace_approximation<D: LogDensity + ?Sized>(target: &D, phi_map: &[f64]) -> Result<DMatrix<f64>> {
    let n = phi_map.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let step = 1e-5 * (1.0 + phi_map[i].abs());
        let mut up = phi_map.to_vec();
        let mut dn = phi_map.to_vec();
        up[i] += step;
        dn[i] -= step;
        let grad = |x: &[f64]| {
            target.log_density_grad(x).map(|(_, g)| g).ok_or_else(|| Error::Domain("gradient undefined next to the mode".into()))
        };
        let col: DVector<f64> = (grad(&up)? - grad(&dn)?) / (2.0 * step);
        h.set_column(i, &(-col));
    }
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::SingularHessian { floored: n, dim: n });
    }
    let floor = 1e-8 * max;
    let floored = eig.eigenvalues.iter().filter(|&&l| l < floor).count();
    if floored as f64 > 0.1 * n as f64 {
        return Err(Error::SingularHessian { floored, dim: n });
    }
    let inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor)));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    Ok((&cov + cov.transpose()) * 0.5)
}
