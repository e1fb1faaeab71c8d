//! Small dense maximizers used by the likelihood fits: Newton with ridge
//! fallback and a BFGS quasi-Newton, both with backtracking line search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn backtrack<F>(f: &F, x: &DVector<f64>, dir: &DVector<f64>, f0: f64) -> Option<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let mut step = 1.0;
    for _ in 0..60 {
        let cand = x + dir * step;
        if let Some(v) = f(&cand) {
            if v > f0 || (v - f0).abs() < 1e-16 {
                return Some((cand, v));
            }
        }
        step *= 0.5;
    }
    None
}

/// Newton maximization. `eval` returns (value, gradient, Hessian) of the
/// objective; non-concave Hessians are ridged until the step ascends.
pub fn newton_maximize<F>(eval: F, x0: DVector<f64>, opts: &OptimOptions) -> Result<OptimResult>
where
    F: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>,
{
    let k = x0.len();
    let mut x = x0;
    let (mut value, mut grad, mut hess) = eval(&x).ok_or_else(|| {
        Error::domain("objective not defined at the starting point".to_string())
    })?;
    let mut stall = 0usize;

    for iter in 0..opts.max_iter {
        let gnorm = grad.amax();
        // Tolerance is relative to the objective scale.
        let tol = opts.grad_tol * (1.0 + value.abs());
        if gnorm < tol || (stall >= 5 && gnorm < 1e-4 * (1.0 + value.abs())) {
            return Ok(OptimResult {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
            });
        }

        // Solve -H d = g, ridging the Hessian if needed.
        let mut ridge = 0.0;
        let dir = loop {
            let mut h = -&hess;
            for i in 0..k {
                h[(i, i)] += ridge;
            }
            if let Some(chol) = h.cholesky() {
                break chol.solve(&grad);
            }
            ridge = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
            if ridge > 1e12 {
                return Err(Error::SingularInformation(
                    "Hessian could not be regularized".into(),
                ));
            }
        };

        let value_only = |p: &DVector<f64>| eval(p).map(|(v, _, _)| v);
        match backtrack(&value_only, &x, &dir, value) {
            Some((xn, _)) => {
                let (v, g, h) = eval(&xn)
                    .ok_or_else(|| Error::domain("objective undefined after step".to_string()))?;
                if (v - value).abs() <= 1e-13 * (1.0 + value.abs()) {
                    stall += 1;
                } else {
                    stall = 0;
                }
                x = xn;
                value = v;
                grad = g;
                hess = h;
            }
            None => {
                // No ascent direction left; report where we stopped.
                return Ok(OptimResult {
                    x,
                    value,
                    grad_norm: gnorm,
                    iterations: iter,
                    converged: gnorm < 1e-4 * (1.0 + value.abs()),
                });
            }
        }
    }

    let gnorm = grad.amax();
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: gnorm,
        context: "newton maximizer".into(),
    })
}

/// BFGS maximization with backtracking line search.
pub fn bfgs_maximize<F>(eval: F, x0: DVector<f64>, opts: &OptimOptions) -> Result<OptimResult>
where
    F: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let k = x0.len();
    let mut x = x0;
    let (mut value, mut grad) = eval(&x)
        .ok_or_else(|| Error::domain("objective not defined at the starting point".to_string()))?;
    let mut h_inv = DMatrix::<f64>::identity(k, k);
    let mut stall = 0usize;

    for iter in 0..opts.max_iter {
        let gnorm = grad.amax();
        let tol = opts.grad_tol * (1.0 + value.abs());
        if gnorm < tol || (stall >= 5 && gnorm < 1e-4 * (1.0 + value.abs())) {
            return Ok(OptimResult {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
            });
        }
        let dir = &h_inv * &grad;
        let value_only = |p: &DVector<f64>| eval(p).map(|(v, _)| v);
        let (xn, _) = match backtrack(&value_only, &x, &dir, value) {
            Some(sv) => sv,
            None => {
                // Retry along the raw gradient before giving up.
                match backtrack(&value_only, &x, &grad, value) {
                    Some(sv) => sv,
                    None => {
                        return Ok(OptimResult {
                            x,
                            value,
                            grad_norm: gnorm,
                            iterations: iter,
                            converged: gnorm < 1e-4 * (1.0 + value.abs()),
                        })
                    }
                }
            }
        };
        let (vn, gn) = eval(&xn)
            .ok_or_else(|| Error::domain("objective undefined after step".to_string()))?;
        if (vn - value).abs() <= 1e-13 * (1.0 + value.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }

        // Treat as minimization of -f: y = grad(-f)_{n+1} - grad(-f)_n.
        let s = &xn - &x;
        let yv = &grad - &gn;
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h_inv = &left * h_inv * right + &s * s.transpose() * rho;
        }
        x = xn;
        value = vn;
        grad = gn;
    }

    let gnorm = grad.amax();
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: gnorm,
        context: "bfgs maximizer".into(),
    })
}
