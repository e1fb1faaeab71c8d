//! Least squares, variance decompositions, and quantile helpers shared by the
//! estimation modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// OLS fit with optional aliased-column dropping.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Coefficients in the original column order; dropped columns carry 0.
    pub coef: DVector<f64>,
    /// Heteroskedasticity-robust (HC1) standard errors; dropped columns carry NaN.
    pub se: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Indices of columns kept after rank screening.
    pub kept: Vec<usize>,
    /// Columns dropped as linearly dependent.
    pub dropped: Vec<usize>,
    pub n: usize,
}

/// OLS with pivoted-QR rank screening. Aliased columns are dropped (zero
/// coefficient, NaN standard error) and reported in `dropped`.
pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<OlsFit> {
    ols_impl(y, x, None)
}

/// OLS with cluster-robust standard errors (clusters given per row).
pub fn ols_clustered(y: &DVector<f64>, x: &DMatrix<f64>, cluster: &[usize]) -> Result<OlsFit> {
    ols_impl(y, x, Some(cluster))
}

fn ols_impl(y: &DVector<f64>, x: &DMatrix<f64>, cluster: Option<&[usize]>) -> Result<OlsFit> {
    let n = x.nrows();
    let k = x.ncols();
    if y.len() != n {
        return Err(Error::domain("y and X row counts differ"));
    }
    if n == 0 || k == 0 {
        return Err(Error::InsufficientData("empty design matrix".into()));
    }

    // Rank screening by Gram-Schmidt column norms.
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    let mut dropped: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..k {
        let mut v = x.column(j).into_owned();
        let norm0 = v.norm().max(1e-300);
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        if v.norm() > 1e-9 * norm0.max(1.0) {
            basis.push(v.normalize());
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::SingularInformation("all columns aliased".into()));
    }

    let xk = x.select_columns(kept.iter());
    let xtx = xk.transpose() * &xk;
    let xty = xk.transpose() * y;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("X'X not positive definite".into()))?;
    let beta_k = chol.solve(&xty);
    let xtx_inv = chol.inverse();

    let fitted = &xk * &beta_k;
    let residuals = y - &fitted;
    let kk = kept.len();

    // Sandwich variance: HC1 by default, cluster-robust when groups given.
    let meat = match cluster {
        None => {
            let mut m = DMatrix::<f64>::zeros(kk, kk);
            for i in 0..n {
                let xi = xk.row(i).transpose();
                let e2 = residuals[i] * residuals[i];
                m += &xi * xi.transpose() * e2;
            }
            let dof = (n as f64 / (n as f64 - kk as f64).max(1.0)).max(1.0);
            m * dof
        }
        Some(groups) => {
            if groups.len() != n {
                return Err(Error::domain("cluster labels must match row count"));
            }
            let g_max = groups.iter().copied().max().unwrap_or(0) + 1;
            let mut sums = vec![DVector::<f64>::zeros(kk); g_max];
            for i in 0..n {
                let xi = xk.row(i).transpose();
                sums[groups[i]] += xi * residuals[i];
            }
            let n_groups = sums.iter().filter(|s| s.norm() > 0.0 || true).count();
            let mut m = DMatrix::<f64>::zeros(kk, kk);
            for s in &sums {
                m += s * s.transpose();
            }
            let g = n_groups as f64;
            let corr = g / (g - 1.0).max(1.0) * ((n as f64 - 1.0) / (n as f64 - kk as f64).max(1.0));
            m * corr
        }
    };
    let vcov = &xtx_inv * meat * &xtx_inv;

    let mut coef = DVector::<f64>::zeros(k);
    let mut se = DVector::<f64>::from_element(k, f64::NAN);
    for (pos, &j) in kept.iter().enumerate() {
        coef[j] = beta_k[pos];
        se[j] = vcov[(pos, pos)].max(0.0).sqrt();
    }

    Ok(OlsFit {
        coef,
        se,
        fitted,
        residuals,
        kept,
        dropped,
        n,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divide by N); the decomposition identity
/// total = between + within holds exactly in this convention.
pub fn variance_pop(values: &[f64]) -> f64 {
    let m = mean(values);
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

/// Sample variance (divide by N - 1).
pub fn variance_sample(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Nearest-rank quantile on a sorted copy: q(p) = sorted[ceil(p * n) - 1].
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}
