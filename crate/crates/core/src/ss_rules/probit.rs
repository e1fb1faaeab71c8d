//! Probit maximum likelihood via Fisher scoring.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub coef: DVector<f64>,
    pub se: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl ProbitFit {
    pub fn index(&self, x_row: &[f64]) -> f64 {
        x_row
            .iter()
            .zip(self.coef.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

fn phi_cdf_clamped(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    n.cdf(z).clamp(1e-300, 1.0 - 1e-16)
}

/// Inverse Mills ratio phi(z) / Phi(z).
pub fn inverse_mills(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    if z < -30.0 {
        // Asymptotic tail: phi/Phi ~ -z for z -> -inf.
        return -z;
    }
    n.pdf(z) / phi_cdf_clamped(z)
}

/// Probit log-likelihood and analytic gradient.
pub fn loglik_grad(
    y: &[bool],
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let n = y.len();
    let k = x.ncols();
    let norm = Normal::new(0.0, 1.0).unwrap();
    let idx = x * beta;
    let mut ll = 0.0;
    let mut g = DVector::<f64>::zeros(k);
    for i in 0..n {
        let z = idx[i];
        let cdf = phi_cdf_clamped(z);
        let pdf = norm.pdf(z);
        if y[i] {
            ll += cdf.ln();
            let w = pdf / cdf;
            for j in 0..k {
                g[j] += w * x[(i, j)];
            }
        } else {
            ll += (1.0 - cdf).max(1e-300).ln();
            let w = pdf / (1.0 - cdf).max(1e-300);
            for j in 0..k {
                g[j] -= w * x[(i, j)];
            }
        }
    }
    (ll, g)
}

/// Detects a regressor that perfectly separates the outcome (monotone
/// separation); returns its column index.
fn separating_column(y: &[bool], x: &DMatrix<f64>) -> Option<usize> {
    let k = x.ncols();
    for j in 0..k {
        let mut min1 = f64::INFINITY;
        let mut max1 = f64::NEG_INFINITY;
        let mut min0 = f64::INFINITY;
        let mut max0 = f64::NEG_INFINITY;
        for (i, &yi) in y.iter().enumerate() {
            let v = x[(i, j)];
            if yi {
                min1 = min1.min(v);
                max1 = max1.max(v);
            } else {
                min0 = min0.min(v);
                max0 = max0.max(v);
            }
        }
        // Constant columns (intercept) cannot separate.
        if (max1 - min1).abs() < 1e-12 && (max0 - min0).abs() < 1e-12 {
            continue;
        }
        if min1 > max0 || min0 > max1 {
            return Some(j);
        }
    }
    None
}

/// Fits a Probit by Fisher scoring with expected information.
pub fn probit_mle(y: &[bool], x: &DMatrix<f64>, names: &[&str]) -> Result<ProbitFit> {
    let n = y.len();
    let k = x.ncols();
    if n != x.nrows() {
        return Err(Error::domain("outcome and design row counts differ"));
    }
    let ones = y.iter().filter(|&&b| b).count();
    if ones == 0 || ones == n {
        return Err(Error::InsufficientData(
            "both outcomes must be present".into(),
        ));
    }
    if let Some(j) = separating_column(y, x) {
        return Err(Error::Separation(
            names.get(j).copied().unwrap_or("x").to_string(),
        ));
    }

    let norm = Normal::new(0.0, 1.0).unwrap();
    let mut beta = DVector::<f64>::zeros(k);
    // Start the intercept at the unconditional quantile.
    beta[0] = norm.inverse_cdf((ones as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6));

    let mut ll = f64::NEG_INFINITY;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;
    for iter in 0..200 {
        iterations = iter + 1;
        let (ll_new, g) = loglik_grad(y, x, &beta);
        gnorm = g.amax();
        ll = ll_new;
        if gnorm < 1e-8 * (1.0 + ll.abs()) {
            break;
        }
        // Expected information.
        let idx = x * &beta;
        let mut info = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let z = idx[i];
            let cdf = phi_cdf_clamped(z);
            let pdf = norm.pdf(z);
            let w = pdf * pdf / (cdf * (1.0 - cdf)).max(1e-280);
            let xi = x.row(i).transpose();
            info += &xi * xi.transpose() * w;
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                return Err(Error::SingularInformation(
                    "probit information matrix".into(),
                ))
            }
        };
        let capped = if step.amax() > 5.0 {
            &step * (5.0 / step.amax())
        } else {
            step
        };
        beta += capped;
        if beta.amax() > 1e4 {
            return Err(Error::Separation("diverging probit index".into()));
        }
    }
    if gnorm > 1e-4 * (1.0 + ll.abs()) {
        return Err(Error::NoConvergence {
            iterations,
            residual: gnorm,
            context: "probit maximum likelihood".into(),
        });
    }

    // Standard errors from the expected information at the optimum.
    let idx = x * &beta;
    let mut info = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let z = idx[i];
        let cdf = phi_cdf_clamped(z);
        let pdf = norm.pdf(z);
        let w = pdf * pdf / (cdf * (1.0 - cdf)).max(1e-280);
        let xi = x.row(i).transpose();
        info += &xi * xi.transpose() * w;
    }
    let inv = info
        .cholesky()
        .ok_or_else(|| Error::SingularInformation("probit information matrix".into()))?
        .inverse();
    let se = DVector::from_fn(k, |j, _| inv[(j, j)].max(0.0).sqrt());

    Ok(ProbitFit {
        coef: beta,
        se,
        loglik: ll,
        iterations,
        grad_norm: gnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal as std_normal, stream_rng};

    fn simulate(n: usize, beta: &[f64], seed: u64) -> (Vec<bool>, DMatrix<f64>) {
        let mut rng = stream_rng(seed, 0, 0, 0x70726f62);
        let k = beta.len();
        let mut x = DMatrix::<f64>::zeros(n, k);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 1..k {
                x[(i, j)] = std_normal(&mut rng);
            }
            let idx: f64 = (0..k).map(|j| beta[j] * x[(i, j)]).sum();
            y.push(idx + std_normal(&mut rng) >= 0.0);
        }
        (y, x)
    }

    #[test]
    fn recovers_coefficients() {
        let truth = [-0.5, 1.2, -0.8];
        let (y, x) = simulate(8000, &truth, 1);
        let fit = probit_mle(&y, &x, &["const", "x1", "x2"]).unwrap();
        for j in 0..3 {
            assert!(
                (fit.coef[j] - truth[j]).abs() < 3.0 * fit.se[j] + 0.05,
                "coef {j}: {} vs {}",
                fit.coef[j],
                truth[j]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (y, x) = simulate(500, &[0.2, -0.7], 3);
        let mut rng = stream_rng(4, 0, 0, 0);
        for _ in 0..20 {
            let beta = DVector::from_fn(2, |_, _| std_normal(&mut rng) * 0.5);
            let (_, g) = loglik_grad(&y, &x, &beta);
            for j in 0..2 {
                let h = 1e-6 * (1.0 + beta[j].abs());
                let mut bp = beta.clone();
                bp[j] += h;
                let mut bm = beta.clone();
                bm[j] -= h;
                let (lp, _) = loglik_grad(&y, &x, &bp);
                let (lm, _) = loglik_grad(&y, &x, &bm);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    ((g[j] - fd) / (1.0 + fd.abs())).abs() < 1e-6,
                    "analytic {} vs fd {}",
                    g[j],
                    fd
                );
            }
        }
    }

    #[test]
    fn score_vanishes_at_optimum() {
        let (y, x) = simulate(3000, &[0.1, 0.9], 7);
        let fit = probit_mle(&y, &x, &["const", "x1"]).unwrap();
        assert!(fit.grad_norm / (1.0 + fit.loglik.abs()) < 1e-6);
    }

    #[test]
    fn perfect_separation_is_reported_by_name() {
        let n = 100;
        let mut x = DMatrix::<f64>::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = i as f64;
            y.push(i >= 50);
        }
        match probit_mle(&y, &x, &["const", "trend"]) {
            Err(Error::Separation(name)) => assert_eq!(name, "trend"),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn one_sided_outcomes_are_insufficient() {
        let (mut y, x) = simulate(100, &[0.0, 0.5], 9);
        for v in y.iter_mut() {
            *v = false;
        }
        assert!(matches!(
            probit_mle(&y, &x, &["const", "x1"]),
            Err(Error::InsufficientData(_))
        ));
    }
}
