//! Damped least-squares (Levenberg-Marquardt) with numerically
//! differenced Jacobians. All fit models in this crate are smooth and
//! low-dimensional, so forward differences with per-parameter scales are
//! sufficient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct FitOptions {
    pub max_iter: usize,
    /// Relative parameter-step convergence criterion.
    pub xtol: f64,
    /// Chi-square plateau criterion (relative improvement per accepted step).
    pub ftol: f64,
    /// Relative forward-difference step.
    pub diff_step: f64,
    /// Typical magnitude per parameter, used for difference steps and the
    /// convergence test when a parameter sits near zero.
    pub typical: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            xtol: 1e-10,
            ftol: 1e-14,
            diff_step: 1e-7,
            typical: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Standard errors scaled by the reduced chi-square.
    pub std_errors: Vec<f64>,
    /// Covariance matrix, row-major n x n.
    pub covariance: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.params.len() + j]
    }
}

/// Minimize |r(p)|^2. `residuals` fills a fixed-length buffer of
/// `n_residuals` values; pre-weight them by 1/sigma when the data carry
/// per-point uncertainties (the covariance is rescaled by the reduced
/// chi-square either way).
pub fn fit<F>(
    n_residuals: usize,
    mut residuals: F,
    init: &[f64],
    opts: &FitOptions,
) -> Result<FitResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = init.len();
    let m = n_residuals;
    if n == 0 {
        return Err(Error::InvalidInput("no fit parameters".into()));
    }
    if m < n {
        return Err(Error::InvalidInput(format!(
            "{m} residuals cannot constrain {n} parameters"
        )));
    }
    let typical: Vec<f64> = (0..n)
        .map(|j| opts.typical.get(j).copied().unwrap_or(1.0).abs().max(1e-300))
        .collect();

    let mut p = init.to_vec();
    let mut r = vec![0.0; m];
    residuals(&p, &mut r)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite residuals at the start point".into()));
    }
    let mut chi2 = norm2(&r);
    let mut lambda = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut r_try = vec![0.0; m];

    for iter in 1..=opts.max_iter {
        for j in 0..n {
            let h = opts.diff_step * p[j].abs().max(typical[j]);
            let mut p_h = p.clone();
            p_h[j] += h;
            residuals(&p_h, &mut r_try)?;
            for i in 0..m {
                jac[(i, j)] = (r_try[i] - r[i]) / h;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * DVector::from_column_slice(&r);

        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for j in 0..n {
                let d = jtj[(j, j)];
                damped[(j, j)] = d + lambda * d.max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let p_new: Vec<f64> = (0..n).map(|j| p[j] + step[j]).collect();
            if residuals(&p_new, &mut r_try).is_err() || r_try.iter().any(|v| !v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let chi2_new = norm2(&r_try);
            if chi2_new < chi2 {
                let rel_step = (0..n)
                    .map(|j| step[j].abs() / p[j].abs().max(typical[j]))
                    .fold(0.0, f64::max);
                let rel_drop = (chi2 - chi2_new) / chi2.max(1e-300);
                p = p_new;
                r.copy_from_slice(&r_try);
                chi2 = chi2_new;
                lambda = (lambda / 3.0).max(1e-14);
                improved = true;
                if rel_step < opts.xtol || rel_drop < opts.ftol {
                    return Ok(finish(p, chi2, m, iter, &jtj));
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e14 {
                // no improvement possible beyond numeric noise
                return Ok(finish(p, chi2, m, iter, &jtj));
            }
        }
        if !improved {
            return Ok(finish(p, chi2, m, iter, &jtj));
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: chi2.sqrt() })
}

fn finish(p: Vec<f64>, chi2: f64, m: usize, iterations: usize, jtj: &DMatrix<f64>) -> FitResult {
    let n = p.len();
    let dof = (m.saturating_sub(n)).max(1) as f64;
    let sigma2 = chi2 / dof;
    let cov = jtj
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN))
        * sigma2;
    let std_errors = (0..n).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let covariance = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| cov[(i, j)])
        .collect();
    FitResult { params: p, std_errors, covariance, chi2, iterations }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exponential_parameters() {
        let xs: Vec<f64> = (0..60).map(|k| k as f64 * 0.1).collect();
        let truth = [2.5, 0.7];
        let data: Vec<f64> = xs.iter().map(|&x| truth[0] * (-truth[1] * x).exp()).collect();
        let result = fit(
            xs.len(),
            |p, out| {
                for (o, (&x, &d)) in out.iter_mut().zip(xs.iter().zip(data.iter())) {
                    *o = p[0] * (-p[1] * x).exp() - d;
                }
                Ok(())
            },
            &[1.0, 1.0],
            &FitOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(result.params[0], truth[0], max_relative = 1e-8);
        assert_relative_eq!(result.params[1], truth[1], max_relative = 1e-8);
        assert!(result.chi2 < 1e-16);
    }

    #[test]
    fn underdetermined_is_an_error() {
        let out = fit(
            1,
            |_p, out| {
                out[0] = 0.0;
                Ok(())
            },
            &[1.0, 2.0],
            &FitOptions::default(),
        );
        assert!(out.is_err());
    }
}
