//! Two-step decomposition of estimated costs: a first-step projection on
//! store and location characteristics (plus product effects) defines the
//! store component; the residual is the manager component, regressed in a
//! second step on manager human capital. Residual dispersion is also
//! projected on store and manager characteristics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sim::chain::{Education, ManagerSpec, StoreSpec};
use crate::stats;

/// One unit's estimated cost vector (gamma_h, gamma_z, gamma_f, gamma_c).
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub store_id: u32,
    pub product_id: u32,
    pub gamma: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct DecomposedRow {
    pub store_id: u32,
    pub product_id: u32,
    pub gamma_sto: [f64; 4],
    pub gamma_man: [f64; 4],
}

/// Second-step regression summary: coefficient and standard error per
/// regressor, in the design's column order.
#[derive(Debug, Clone)]
pub struct RegressionSummary {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub r2: f64,
}

#[derive(Debug, Clone)]
pub struct CostDecomposition {
    pub rows: Vec<DecomposedRow>,
    /// First-step R^2 per cost parameter.
    pub first_step_r2: [f64; 4],
    /// Dropped (aliased) first-step columns per cost parameter.
    pub first_step_dropped: [Vec<String>; 4],
    /// Residuals on education dummies and experience years.
    pub second_step: [RegressionSummary; 4],
    /// |residual| on store covariates.
    pub dispersion_on_store: [RegressionSummary; 4],
    /// |residual| on manager covariates.
    pub dispersion_on_manager: [RegressionSummary; 4],
}

fn first_step_design(
    estimates: &[GammaEstimate],
    stores: &[StoreSpec],
    n_products: usize,
    n_regions: usize,
) -> (DMatrix<f64>, Vec<String>, Vec<usize>) {
    let n = estimates.len();
    // intercept, class dummies (AA..D, AAA base), 3 covariates,
    // region dummies (region 0 base), product dummies (product 0 base).
    let k = 1 + 5 + 3 + (n_regions.saturating_sub(1)) + (n_products.saturating_sub(1));
    let mut x = DMatrix::<f64>::zeros(n, k);
    let mut names = Vec::with_capacity(k);
    names.push("intercept".to_string());
    for c in ["AA", "A", "B", "C", "D"] {
        names.push(format!("class_{c}"));
    }
    names.push("log_assortment".into());
    names.push("log_population".into());
    names.push("log_income".into());
    for r in 1..n_regions {
        names.push(format!("region_{r}"));
    }
    for p in 1..n_products {
        names.push(format!("product_{p}"));
    }
    let mut clusters = Vec::with_capacity(n);
    for (i, e) in estimates.iter().enumerate() {
        let store = &stores[e.store_id as usize];
        clusters.push(e.store_id as usize);
        x[(i, 0)] = 1.0;
        let ci = store.class.index();
        if ci > 0 {
            x[(i, ci)] = 1.0;
        }
        x[(i, 6)] = store.log_assortment;
        x[(i, 7)] = store.log_population;
        x[(i, 8)] = store.log_income;
        let mut col = 9;
        for r in 1..n_regions {
            if store.region as usize == r {
                x[(i, col)] = 1.0;
            }
            col += 1;
        }
        for p in 1..n_products {
            if e.product_id as usize == p {
                x[(i, col)] = 1.0;
            }
            col += 1;
        }
    }
    (x, names, clusters)
}

fn manager_design(estimates: &[GammaEstimate], managers: &[ManagerSpec]) -> (DMatrix<f64>, Vec<String>) {
    let n = estimates.len();
    let mut x = DMatrix::<f64>::zeros(n, 5);
    let names = vec![
        "intercept".to_string(),
        "edu_high_school".to_string(),
        "edu_college".to_string(),
        "years_lcbo".to_string(),
        "years_other".to_string(),
    ];
    for (i, e) in estimates.iter().enumerate() {
        let m = &managers[e.store_id as usize];
        x[(i, 0)] = 1.0;
        match m.education {
            Education::HighSchool => x[(i, 1)] = 1.0,
            Education::College => x[(i, 2)] = 1.0,
            Education::University => {}
        }
        x[(i, 3)] = m.years_lcbo;
        x[(i, 4)] = m.years_other;
    }
    (x, names)
}

fn summarize(fit: &stats::OlsFit, names: &[String], y: &DVector<f64>) -> RegressionSummary {
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let ssr: f64 = fit.residuals.iter().map(|r| r * r).sum();
    RegressionSummary {
        names: names.to_vec(),
        coef: fit.coef.iter().cloned().collect(),
        se: fit.se.iter().cloned().collect(),
        r2: if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 },
    }
}

/// Runs the two-step decomposition. `stores` and `managers` are indexed by
/// store_id; product count and region count size the dummy blocks.
pub fn decompose_costs(
    estimates: &[GammaEstimate],
    stores: &[StoreSpec],
    managers: &[ManagerSpec],
    n_products: usize,
    n_regions: usize,
) -> Result<CostDecomposition> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData("no estimates to decompose".into()));
    }
    if managers.len() != stores.len() {
        return Err(Error::domain("one manager per store required"));
    }
    let n = estimates.len();
    let (x, names, clusters) = first_step_design(estimates, stores, n_products, n_regions);
    let (xm, m_names) = manager_design(estimates, managers);

    let mut rows: Vec<DecomposedRow> = estimates
        .iter()
        .map(|e| DecomposedRow {
            store_id: e.store_id,
            product_id: e.product_id,
            gamma_sto: [0.0; 4],
            gamma_man: [0.0; 4],
        })
        .collect();
    let mut first_step_r2 = [0.0f64; 4];
    let mut first_step_dropped: [Vec<String>; 4] = Default::default();
    let mut second_step: Vec<RegressionSummary> = Vec::with_capacity(4);
    let mut disp_store: Vec<RegressionSummary> = Vec::with_capacity(4);
    let mut disp_man: Vec<RegressionSummary> = Vec::with_capacity(4);

    for p in 0..4 {
        let y = DVector::from_fn(n, |i, _| estimates[i].gamma[p]);
        let fit = stats::ols_clustered(&y, &x, &clusters)?;
        first_step_dropped[p] = fit.dropped.iter().map(|&j| names[j].clone()).collect();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let ssr: f64 = fit.residuals.iter().map(|r| r * r).sum();
        first_step_r2[p] = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
        for i in 0..n {
            rows[i].gamma_sto[p] = fit.fitted[i];
            rows[i].gamma_man[p] = fit.residuals[i];
        }

        let resid = fit.residuals.clone();
        let fit2 = stats::ols_clustered(&resid, &xm, &clusters)?;
        second_step.push(summarize(&fit2, &m_names, &resid));

        let abs_resid = DVector::from_fn(n, |i, _| resid[i].abs());
        let fit3 = stats::ols_clustered(&abs_resid, &x, &clusters)?;
        disp_store.push(summarize(&fit3, &names, &abs_resid));
        let fit4 = stats::ols_clustered(&abs_resid, &xm, &clusters)?;
        disp_man.push(summarize(&fit4, &m_names, &abs_resid));
    }

    Ok(CostDecomposition {
        rows,
        first_step_r2,
        first_step_dropped,
        second_step: [
            second_step.remove(0),
            second_step.remove(0),
            second_step.remove(0),
            second_step.remove(0),
        ],
        dispersion_on_store: [
            disp_store.remove(0),
            disp_store.remove(0),
            disp_store.remove(0),
            disp_store.remove(0),
        ],
        dispersion_on_manager: [
            disp_man.remove(0),
            disp_man.remove(0),
            disp_man.remove(0),
            disp_man.remove(0),
        ],
    })
}

impl CostDecomposition {
    /// Max |gamma_sto + gamma_man - estimate| over the table.
    pub fn additivity_error(&self, estimates: &[GammaEstimate]) -> f64 {
        let mut worst = 0.0f64;
        for (row, e) in self.rows.iter().zip(estimates.iter()) {
            for p in 0..4 {
                worst = worst.max((row.gamma_sto[p] + row.gamma_man[p] - e.gamma[p]).abs());
            }
        }
        worst
    }
}
