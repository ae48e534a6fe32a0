use nalgebra::{DMatrix, DVector};

use super::{DerivLevel, Layout, ModelSpec, PreSample};
use crate::error::{Error, Result};

const SIGMA2_FLOOR: f64 = 1e-300;

/// Smoothed indicator Λ_k(x) = 1/(1 + e^{-kx}) with its first two derivatives in x.
#[inline]
fn logistic(k: f64, x: f64) -> (f64, f64, f64) {
    let (lam, one_minus) = if x >= 0.0 {
        let e = (-k * x).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = (k * x).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    let d1 = k * lam * one_minus;
    let d2 = k * d1 * (one_minus - lam);
    (lam, d1, d2)
}

/// One-step-at-a-time σ² recursion carrying derivatives with respect to θ_v.
///
/// History buffers hold lags 1..q, newest first. Derivative history starts at zero.
pub(crate) struct VarianceStepper<'a> {
    layout: Layout,
    k: f64,
    theta: &'a [f64],
    data: &'a [f64],
    presample: &'a PreSample,
    level: DerivLevel,
    t: usize,
    s2_hist: Vec<f64>,
    g_hist: Vec<f64>,
    h_hist: Vec<f64>,
    pub sigma2: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl<'a> VarianceStepper<'a> {
    pub fn new(spec: &ModelSpec, theta: &'a [f64], data: &'a [f64], presample: &'a PreSample, level: DerivLevel) -> Result<Self> {
        let layout = spec.layout();
        layout.check_theta(theta)?;
        presample.check(spec)?;
        let dv = layout.dim_v;
        let q = layout.q;
        let (ng, nh) = match level {
            DerivLevel::None => (0, 0),
            DerivLevel::Gradient => (dv, 0),
            DerivLevel::Hessian => (dv, dv * dv),
        };
        Ok(VarianceStepper {
            layout,
            k: spec.logistic_steepness,
            theta,
            data,
            presample,
            level,
            t: 0,
            s2_hist: presample.sigma2_init.clone(),
            g_hist: vec![0.0; q * ng],
            h_hist: vec![0.0; q * nh],
            sigma2: f64::NAN,
            grad: vec![0.0; ng],
            hess: vec![0.0; nh],
        })
    }

    /// Number of recursion steps executed so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    fn lag_y(&self, t: usize, i: usize) -> f64 {
        if t > i {
            self.data[t - i - 1]
        } else {
            self.presample.y_init[i - t]
        }
    }

    /// Advance to σ²_{t+1}; afterwards `sigma2`, `grad`, `hess` describe the new step.
    pub fn step(&mut self) -> Result<()> {
        let l = self.layout;
        let th = self.theta;
        let dv = l.dim_v;
        let t = self.t + 1;
        let mu = th[Layout::MU];
        let want_g = self.level != DerivLevel::None;
        let want_h = self.level == DerivLevel::Hessian;

        let mut s2 = th[Layout::OMEGA];
        if want_g {
            self.grad.iter_mut().for_each(|v| *v = 0.0);
            self.grad[Layout::OMEGA] = 1.0;
        }
        if want_h {
            self.hess.iter_mut().for_each(|v| *v = 0.0);
        }

        for i in 0..l.p {
            let z = self.lag_y(t, i + 1) - mu;
            let z2 = z * z;
            let a = th[l.alpha(i)];
            let (g, g1, g2, c) = if l.has_gamma {
                let (g, g1, g2) = logistic(self.k, -z);
                (g, g1, g2, th[l.gamma(i)])
            } else {
                (0.0, 0.0, 0.0, 0.0)
            };
            s2 += (a + c * g) * z2;
            if want_g {
                self.grad[Layout::MU] += -2.0 * (a + c * g) * z + c * z2 * g1;
                self.grad[l.alpha(i)] = z2;
                if l.has_gamma {
                    self.grad[l.gamma(i)] = g * z2;
                }
            }
            if want_h {
                let h = &mut self.hess;
                h[0] += 2.0 * a + c * (2.0 * g - 4.0 * z * g1 + z2 * g2);
                let ia = l.alpha(i);
                h[ia] = -2.0 * z;
                h[ia * dv] = -2.0 * z;
                if l.has_gamma {
                    let ig = l.gamma(i);
                    let v = z2 * g1 - 2.0 * g * z;
                    h[ig] = v;
                    h[ig * dv] = v;
                }
            }
        }

        for j in 0..l.q {
            let b = th[l.beta(j)];
            let s2_lag = self.s2_hist[j];
            s2 += b * s2_lag;
            if want_g {
                let ib = l.beta(j);
                let g_lag = &self.g_hist[j * dv..(j + 1) * dv];
                for (gi, &gl) in self.grad.iter_mut().zip(g_lag) {
                    *gi += b * gl;
                }
                self.grad[ib] += s2_lag;
                if want_h {
                    let h_lag = &self.h_hist[j * dv * dv..(j + 1) * dv * dv];
                    for (hi, &hl) in self.hess.iter_mut().zip(h_lag) {
                        *hi += b * hl;
                    }
                    for r in 0..dv {
                        self.hess[ib * dv + r] += g_lag[r];
                        self.hess[r * dv + ib] += g_lag[r];
                    }
                }
            }
        }

        if !(s2 > SIGMA2_FLOOR) || !s2.is_finite() {
            return Err(Error::NonPositiveVariance { t, value: s2 });
        }
        self.sigma2 = s2;
        self.t = t;

        if l.q > 0 {
            self.s2_hist.rotate_right(1);
            self.s2_hist[0] = s2;
            if want_g {
                self.g_hist.rotate_right(dv);
                self.g_hist[..dv].copy_from_slice(&self.grad);
            }
            if want_h {
                self.h_hist.rotate_right(dv * dv);
                self.h_hist[..dv * dv].copy_from_slice(&self.hess);
            }
        }
        Ok(())
    }
}

/// σ²_t and its θ_v-derivatives for t = 1..=upto.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePath {
    pub sigma2: Vec<f64>,
    pub grad: Vec<DVector<f64>>,
    pub hess: Vec<DMatrix<f64>>,
}

pub fn variance_path_with_derivatives(
    spec: &ModelSpec,
    theta: &[f64],
    data: &[f64],
    presample: &PreSample,
    upto: usize,
    level: DerivLevel,
) -> Result<VariancePath> {
    if upto > data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: upto });
    }
    let dv = spec.layout().dim_v;
    let mut st = VarianceStepper::new(spec, theta, data, presample, level)?;
    let mut path = VariancePath { sigma2: Vec::with_capacity(upto), grad: Vec::new(), hess: Vec::new() };
    for _ in 0..upto {
        st.step()?;
        path.sigma2.push(st.sigma2);
        if level != DerivLevel::None {
            path.grad.push(DVector::from_column_slice(&st.grad));
        }
        if level == DerivLevel::Hessian {
            path.hess.push(DMatrix::from_row_slice(dv, dv, &st.hess));
        }
    }
    Ok(path)
}
