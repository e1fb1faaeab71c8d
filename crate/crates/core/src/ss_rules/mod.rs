//! Reduced-form (S_t, s_t) decision rules: Probit order-placement equation,
//! Heckman two-step upper-threshold regression, threshold evaluation,
//! shrinkage, and variance decompositions.
//!
//! Lower threshold: ordering iff ln k <= beta0 + beta_d ln d_e + beta_p ln p
//! + u, estimated as a Probit with coefficients b = beta / sigma_u and
//! b_k = -1 / sigma_u. Upper threshold: on order days ln(k + y) = ln S_t;
//! the stock regressor is excluded from the outcome equation and identifies
//! the selection correction.

pub mod probit;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::demand::DemandFit;
use crate::error::{Error, Result};
use crate::stats;
use crate::types::PanelRow;
use probit::{inverse_mills, probit_mle, ProbitFit};

/// One day of reduced-form data for a store-product.
#[derive(Debug, Clone)]
pub struct SsObs {
    /// Beginning-of-day stock.
    pub stock: f64,
    /// Expected demand from the forecasting fit.
    pub expected_demand: f64,
    pub price: f64,
    pub ordered: bool,
    /// Stock after the order arrives, k + y.
    pub stock_after: f64,
}

/// Builds reduced-form observations from a panel using a demand fit for the
/// per-day expected demand.
pub fn obs_from_panel(rows: &[PanelRow], demand: &DemandFit) -> Vec<SsObs> {
    rows.iter()
        .map(|r| {
            let (de, _) = demand.forecast(r.price, r.trailing7, r.weekend, r.holiday);
            SsObs {
                stock: r.inventory as f64,
                expected_demand: de.max(1e-12),
                price: r.price,
                ordered: r.order > 0,
                stock_after: (r.inventory + r.order) as f64,
            }
        })
        .collect()
}

/// Lower-threshold Probit coefficients (b0, bk, bd, bp) and the implied
/// structural scale and slopes.
#[derive(Debug, Clone)]
pub struct LowerFit {
    /// (b0, bk, bd, bp).
    pub b: [f64; 4],
    pub se: [f64; 4],
    /// sigma_u = -1 / bk; NaN when bk >= 0.
    pub sigma_u: f64,
    /// (beta0, beta_d, beta_p) = (b0, bd, bp) * sigma_u.
    pub beta: [f64; 3],
    pub loglik: f64,
}

/// Upper-threshold Heckman second stage: (beta0, beta_d, beta_p, mills).
#[derive(Debug, Clone)]
pub struct UpperFit {
    pub beta: [f64; 4],
    pub se: [f64; 4],
    pub n_orders: usize,
    pub ridged: bool,
}

#[derive(Debug, Clone)]
pub struct SsRuleParams {
    pub lower: LowerFit,
    pub upper: UpperFit,
}

#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub log_s0: f64,
    pub log_s_upper0: f64,
}

/// ln k with zero-stock days kept in sample: ln(max(k, 1)), so a day at
/// zero stock enters at the same index as one unit.
fn ln_stock(k: f64) -> f64 {
    k.max(1.0).ln()
}

/// Fits the order-placement Probit: P(order) = Phi(b0 + bk ln k + bd ln d_e
/// + bp ln p).
pub fn fit_order_probit(obs: &[SsObs]) -> Result<LowerFit> {
    let n = obs.len();
    let orders = obs.iter().filter(|o| o.ordered).count();
    if orders < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 order days, have {orders}"
        )));
    }
    if orders == n {
        return Err(Error::InsufficientData("no no-order days present".into()));
    }
    let mut x = DMatrix::<f64>::zeros(n, 4);
    let mut y = Vec::with_capacity(n);
    for (i, o) in obs.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = ln_stock(o.stock);
        x[(i, 2)] = o.expected_demand.ln();
        x[(i, 3)] = o.price.ln();
        y.push(o.ordered);
    }
    let fit: ProbitFit = probit_mle(&y, &x, &["const", "ln_k", "ln_de", "ln_p"])?;
    let b = [fit.coef[0], fit.coef[1], fit.coef[2], fit.coef[3]];
    let se = [fit.se[0], fit.se[1], fit.se[2], fit.se[3]];
    let sigma_u = if b[1] < 0.0 { -1.0 / b[1] } else { f64::NAN };
    let beta = [b[0] * sigma_u, b[2] * sigma_u, b[3] * sigma_u];
    Ok(LowerFit {
        b,
        se,
        sigma_u,
        beta,
        loglik: fit.loglik,
    })
}

/// Heckman second stage: OLS of ln(k + y) on (1, ln d_e, ln p, mills) over
/// order days, with the Mills ratio from the first-stage Probit index.
/// Near-collinear designs fall back to a 1e-8 ridge. Standard errors are
/// heteroskedasticity-robust and ignore first-stage noise.
pub fn fit_upper_heckman(obs: &[SsObs], lower: &LowerFit) -> Result<UpperFit> {
    let selected: Vec<&SsObs> = obs.iter().filter(|o| o.ordered).collect();
    let m = selected.len();
    if m < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 order days, have {m}"
        )));
    }
    let mut x = DMatrix::<f64>::zeros(m, 4);
    let mut y = DVector::<f64>::zeros(m);
    for (i, o) in selected.iter().enumerate() {
        let idx = lower.b[0]
            + lower.b[1] * ln_stock(o.stock)
            + lower.b[2] * o.expected_demand.ln()
            + lower.b[3] * o.price.ln();
        x[(i, 0)] = 1.0;
        x[(i, 1)] = o.expected_demand.ln();
        x[(i, 2)] = o.price.ln();
        x[(i, 3)] = inverse_mills(idx);
        y[i] = o.stock_after.max(1e-9).ln();
    }

    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let (beta_v, ridged) = match xtx.clone().cholesky() {
        Some(ch) if rcond_ok(&xtx) => (ch.solve(&xty), false),
        _ => {
            let mut r = xtx.clone();
            for d in 0..4 {
                r[(d, d)] += 1e-8;
            }
            let ch = r
                .cholesky()
                .ok_or_else(|| Error::SingularSystem("heckman second stage".into()))?;
            (ch.solve(&xty), true)
        }
    };

    let resid = &y - &x * &beta_v;
    let mut xtx2 = xtx;
    if ridged {
        for d in 0..4 {
            xtx2[(d, d)] += 1e-8;
        }
    }
    let inv = xtx2
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("heckman second stage".into()))?
        .inverse();
    let mut meat = DMatrix::<f64>::zeros(4, 4);
    for i in 0..m {
        let xi = x.row(i).transpose();
        meat += &xi * xi.transpose() * (resid[i] * resid[i]);
    }
    let scale = m as f64 / (m as f64 - 4.0).max(1.0);
    let vcov = &inv * meat * &inv * scale;

    Ok(UpperFit {
        beta: [beta_v[0], beta_v[1], beta_v[2], beta_v[3]],
        se: [
            vcov[(0, 0)].max(0.0).sqrt(),
            vcov[(1, 1)].max(0.0).sqrt(),
            vcov[(2, 2)].max(0.0).sqrt(),
            vcov[(3, 3)].max(0.0).sqrt(),
        ],
        n_orders: m,
        ridged,
    })
}

fn rcond_ok(xtx: &DMatrix<f64>) -> bool {
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for i in 0..xtx.nrows() {
        dmin = dmin.min(xtx[(i, i)]);
        dmax = dmax.max(xtx[(i, i)]);
    }
    dmin > 1e-12 * dmax
}

/// Fits both stages.
pub fn fit_ss_rules(obs: &[SsObs]) -> Result<SsRuleParams> {
    let lower = fit_order_probit(obs)?;
    let upper = fit_upper_heckman(obs, &lower)?;
    Ok(SsRuleParams { lower, upper })
}

/// Log-thresholds evaluated at mean log expected demand and mean log price
/// (selection shocks at zero; no Mills term in the evaluation).
pub fn thresholds_at(params: &SsRuleParams, ln_de_mean: f64, ln_p_mean: f64) -> Thresholds {
    Thresholds {
        log_s0: params.lower.beta[0]
            + params.lower.beta[1] * ln_de_mean
            + params.lower.beta[2] * ln_p_mean,
        log_s_upper0: params.upper.beta[0]
            + params.upper.beta[1] * ln_de_mean
            + params.upper.beta[2] * ln_p_mean,
    }
}

/// Shrinkage estimator: gamma* = mean + sqrt(max(0, 1 - se^2 / Var(gamma)))
/// * (gamma - mean), with the population variance across units.
pub fn shrink(estimates: &[f64], ses: &[f64]) -> Result<Vec<f64>> {
    if estimates.len() != ses.len() {
        return Err(Error::domain("estimates and ses must have equal length"));
    }
    let var = stats::variance_pop(estimates);
    if !(var > 0.0) {
        return Err(Error::domain("population variance must be positive"));
    }
    let mean = stats::mean(estimates);
    Ok(estimates
        .iter()
        .zip(ses.iter())
        .map(|(g, s)| {
            let w = (1.0 - s * s / var).max(0.0).sqrt();
            mean + w * (g - mean)
        })
        .collect())
}

/// Between-store and within-store variance of unit-level estimates
/// (population variances; between + within = total for balanced panels).
pub fn variance_decomposition(keyed: &[(u32, u32, f64)]) -> Result<(f64, f64)> {
    use std::collections::BTreeMap;
    let mut by_store: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (store, _product, v) in keyed {
        by_store.entry(*store).or_default().push(*v);
    }
    if by_store.len() < 2 {
        return Err(Error::domain(
            "within-store variance undefined with fewer than 2 stores",
        ));
    }
    if by_store.values().any(|v| v.len() < 2) {
        return Err(Error::domain("need at least 2 products per store"));
    }
    let means: Vec<f64> = by_store.values().map(|v| stats::mean(v)).collect();
    let between = stats::variance_pop(&means);
    let withins: Vec<f64> = by_store.values().map(|v| stats::variance_pop(v)).collect();
    let within = stats::mean(&withins);
    Ok((between, within))
}

/// Fraction of stores whose estimate falls outside the Bonferroni-corrected
/// 95% band around the cross-store median under the homogeneity null.
pub fn homogeneity_outside_fraction(estimates: &[f64], ses: &[f64]) -> f64 {
    let n = estimates.len();
    if n == 0 {
        return 0.0;
    }
    let med = stats::median(estimates);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let z = norm.inverse_cdf(1.0 - 0.025 / n as f64);
    let outside = estimates
        .iter()
        .zip(ses.iter())
        .filter(|(g, s)| (*g - med).abs() > z * **s)
        .count();
    outside as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal as std_normal, stream_rng};
    use rand::Rng;

    /// Simulates a threshold-following agent: order iff k <= s_t, order up
    /// to S_t, with log-linear thresholds driven by price and an AR(1)
    /// expected-demand state. Selection and outcome shocks can be
    /// correlated.
    pub struct SsAgentSpec {
        pub beta_lower: [f64; 3],
        pub beta_upper: [f64; 3],
        pub sigma_lower: f64,
        pub sigma_upper: f64,
        pub rho: f64,
    }

    impl Default for SsAgentSpec {
        fn default() -> Self {
            SsAgentSpec {
                beta_lower: [1.1, 0.8, 0.25],
                beta_upper: [2.4, 0.7, 0.15],
                sigma_lower: 0.45,
                sigma_upper: 0.35,
                rho: 0.0,
            }
        }
    }

    pub fn simulate_ss_agent(spec: &SsAgentSpec, t: usize, seed: u64) -> Vec<SsObs> {
        let mut rng = stream_rng(seed, 0, 0, 0x7373);
        let prices = [9.98f64, 12.40];
        let mut price = prices[0];
        let mut ln_de = 1.0f64;
        let mut k = 18.0f64;
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            if rng.gen::<f64>() < 0.12 {
                price = if price == prices[0] { prices[1] } else { prices[0] };
            }
            // AR(1) expected demand, mean depending on price.
            let mu = 1.4 - 0.4 * (price / prices[0]).ln();
            ln_de = mu + 0.6 * (ln_de - mu) + 0.3 * std_normal(&mut rng);
            let de = ln_de.exp();

            let z1 = std_normal(&mut rng);
            let z2 = std_normal(&mut rng);
            let u_s = spec.sigma_lower * z1;
            let u_up = spec.sigma_upper * (spec.rho * z1 + (1.0 - spec.rho.powi(2)).sqrt() * z2);
            let s_t = (spec.beta_lower[0]
                + spec.beta_lower[1] * ln_de
                + spec.beta_lower[2] * price.ln()
                + u_s)
                .exp();
            let s_up_t = (spec.beta_upper[0]
                + spec.beta_upper[1] * ln_de
                + spec.beta_upper[2] * price.ln()
                + u_up)
                .exp();

            let ordered = k <= s_t;
            // Order-up-to: the post-order stock equals the upper threshold
            // on every order day (the test agent may return stock).
            let stock_after = if ordered { s_up_t } else { k };
            out.push(SsObs {
                stock: k,
                expected_demand: de,
                price,
                ordered,
                stock_after,
            });

            // Demand realization and stock update.
            let d = (de * (0.35 * std_normal(&mut rng)).exp()).max(0.0);
            k = (stock_after - d.min(stock_after)).max(0.0);
        }
        out
    }

    #[test]
    fn probit_finds_negative_stock_coefficient() {
        let spec = SsAgentSpec::default();
        let mut negatives = 0;
        let reps = 20;
        for r in 0..reps {
            let obs = simulate_ss_agent(&spec, 2500, 100 + r);
            let fit = fit_order_probit(&obs).unwrap();
            if fit.b[1] < 0.0 {
                negatives += 1;
            }
        }
        assert_eq!(negatives, reps, "bk >= 0 in {} runs", reps - negatives);
    }

    #[test]
    fn recovered_scale_and_demand_slope() {
        let spec = SsAgentSpec::default();
        let obs = simulate_ss_agent(&spec, 5000, 11);
        let fit = fit_order_probit(&obs).unwrap();
        assert!(fit.b[1] < 0.0);
        assert!(
            (fit.sigma_u - spec.sigma_lower).abs() / spec.sigma_lower < 0.2,
            "sigma_u {} vs {}",
            fit.sigma_u,
            spec.sigma_lower
        );
        assert!(fit.b[2] > 0.0, "bd = {}", fit.b[2]);
        // Mapping check: beta = b * sigma_u and sigma_u = -1 / bk exactly.
        assert!((fit.sigma_u + 1.0 / fit.b[1]).abs() < 1e-12);
        assert!((fit.beta[1] - fit.b[2] * fit.sigma_u).abs() < 1e-12);
    }

    #[test]
    fn heckman_covers_zero_mills_under_independence() {
        let spec = SsAgentSpec::default();
        let mut covered = 0;
        let reps = 40;
        for r in 0..reps {
            let obs = simulate_ss_agent(&spec, 6000, 300 + r);
            let fit = fit_ss_rules(&obs).unwrap();
            let (m, se) = (fit.upper.beta[3], fit.upper.se[3]);
            if m.abs() <= 1.96 * se {
                covered += 1;
            }
        }
        assert!(covered * 10 >= reps * 9, "coverage {covered}/{reps}");
    }

    #[test]
    fn heckman_beats_naive_ols_under_correlated_shocks() {
        let spec = SsAgentSpec {
            rho: 0.6,
            ..SsAgentSpec::default()
        };
        let mut wins = 0;
        let reps = 25;
        for r in 0..reps {
            let obs = simulate_ss_agent(&spec, 10_000, 700 + r);
            let fit = fit_ss_rules(&obs).unwrap();
            // Naive OLS without the Mills column.
            let selected: Vec<&SsObs> = obs.iter().filter(|o| o.ordered).collect();
            let m = selected.len();
            let mut x = DMatrix::<f64>::zeros(m, 3);
            let mut y = DVector::<f64>::zeros(m);
            for (i, o) in selected.iter().enumerate() {
                x[(i, 0)] = 1.0;
                x[(i, 1)] = o.expected_demand.ln();
                x[(i, 2)] = o.price.ln();
                y[i] = o.stock_after.ln();
            }
            let naive = crate::stats::ols(&y, &x).unwrap();
            let truth = spec.beta_upper[0];
            if (fit.upper.beta[0] - truth).abs() < (naive.coef[0] - truth).abs() {
                wins += 1;
            }
        }
        assert!(wins * 10 >= reps * 8, "heckman wins only {wins}/{reps}");
    }

    #[test]
    fn upper_demand_slope_positive() {
        let obs = simulate_ss_agent(&SsAgentSpec::default(), 4000, 42);
        let fit = fit_ss_rules(&obs).unwrap();
        assert!(fit.upper.beta[1] > 0.0, "betad_S = {}", fit.upper.beta[1]);
    }

    #[test]
    fn thresholds_at_means_recover_planted_upper() {
        let spec = SsAgentSpec::default();
        let obs = simulate_ss_agent(&spec, 5000, 77);
        let fit = fit_ss_rules(&obs).unwrap();
        let ln_de_mean = crate::stats::mean(
            &obs.iter()
                .map(|o| o.expected_demand.ln())
                .collect::<Vec<_>>(),
        );
        let ln_p_mean = crate::stats::mean(&obs.iter().map(|o| o.price.ln()).collect::<Vec<_>>());
        let th = thresholds_at(&fit, ln_de_mean, ln_p_mean);
        let planted_up = (spec.beta_upper[0]
            + spec.beta_upper[1] * ln_de_mean
            + spec.beta_upper[2] * ln_p_mean)
            .exp();
        let got = th.log_s_upper0.exp();
        assert!(
            (got - planted_up).abs() / planted_up < 0.15,
            "S0 {got} vs planted {planted_up}"
        );
        // Zero slopes collapse the thresholds to the intercepts.
        let flat = SsRuleParams {
            lower: LowerFit {
                b: [0.5, -1.0, 0.0, 0.0],
                se: [0.0; 4],
                sigma_u: 1.0,
                beta: [0.5, 0.0, 0.0],
                loglik: 0.0,
            },
            upper: UpperFit {
                beta: [1.5, 0.0, 0.0, 0.0],
                se: [0.0; 4],
                n_orders: 0,
                ridged: false,
            },
        };
        let th0 = thresholds_at(&flat, 3.0, 2.0);
        assert_eq!(th0.log_s0, 0.5);
        assert_eq!(th0.log_s_upper0, 1.5);
    }

    #[test]
    fn preorder_stock_tracks_lower_threshold() {
        // Desk-scale analogue of the inventory-to-sales-before-order ratio:
        // mean stock on order days sits near exp(log_s0).
        let spec = SsAgentSpec::default();
        let obs = simulate_ss_agent(&spec, 6000, 5);
        let fit = fit_ss_rules(&obs).unwrap();
        let ln_de_mean = crate::stats::mean(
            &obs.iter()
                .map(|o| o.expected_demand.ln())
                .collect::<Vec<_>>(),
        );
        let ln_p_mean = crate::stats::mean(&obs.iter().map(|o| o.price.ln()).collect::<Vec<_>>());
        let th = thresholds_at(&fit, ln_de_mean, ln_p_mean);
        let pre_order: Vec<f64> = obs.iter().filter(|o| o.ordered).map(|o| o.stock).collect();
        let mean_pre = crate::stats::mean(&pre_order);
        let s0 = th.log_s0.exp();
        assert!(
            mean_pre / s0 > 0.4 && mean_pre / s0 < 2.5,
            "mean pre-order stock {mean_pre} vs s0 {s0}"
        );
    }

    #[test]
    fn shrinkage_identities() {
        let estimates = [1.0, 2.0, 3.0, 4.0, 10.0];
        // All ses zero: output equals input.
        let same = shrink(&estimates, &[0.0; 5]).unwrap();
        assert_eq!(same, estimates.to_vec());

        // ses^2 = Var: everything collapses to the mean.
        let var = crate::stats::variance_pop(&estimates);
        let collapsed = shrink(&estimates, &[var.sqrt(); 5]).unwrap();
        let mean = crate::stats::mean(&estimates);
        for v in collapsed {
            assert!((v - mean).abs() < 1e-12);
        }

        // Homogeneous noise below the cross-sectional spread: exact variance
        // identity Var(g*) = Var(g) - mean(se^2), and the mean is preserved.
        let se = 0.8f64;
        let shrunk = shrink(&estimates, &[se; 5]).unwrap();
        assert!((crate::stats::mean(&shrunk) - mean).abs() < 1e-12);
        let got = crate::stats::variance_pop(&shrunk);
        assert!((got - (var - se * se)).abs() < 1e-10, "{got}");
    }

    #[test]
    fn variance_decomposition_edge_cases_and_oracle() {
        // Identical products within each store: within = 0.
        let keyed: Vec<(u32, u32, f64)> =
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 5.0), (1, 1, 5.0)];
        let (between, within) = variance_decomposition(&keyed).unwrap();
        assert_eq!(within, 0.0);
        assert!(between > 0.0);

        // Identical stores: between = 0.
        let keyed2: Vec<(u32, u32, f64)> =
            vec![(0, 0, 1.0), (0, 1, 3.0), (1, 0, 1.0), (1, 1, 3.0)];
        let (b2, w2) = variance_decomposition(&keyed2).unwrap();
        assert_eq!(b2, 0.0);
        assert!(w2 > 0.0);

        // Random input matches a direct two-way oracle.
        let mut rng = stream_rng(13, 0, 0, 0);
        let mut keyed3 = Vec::new();
        for s in 0..6u32 {
            for p in 0..4u32 {
                keyed3.push((s, p, rng.gen::<f64>() * 10.0));
            }
        }
        let (b3, w3) = variance_decomposition(&keyed3).unwrap();
        let mut store_means = Vec::new();
        let mut withins = Vec::new();
        for s in 0..6u32 {
            let vals: Vec<f64> = keyed3
                .iter()
                .filter(|(st, _, _)| *st == s)
                .map(|(_, _, v)| *v)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            store_means.push(m);
            withins.push(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64);
        }
        let gm = store_means.iter().sum::<f64>() / store_means.len() as f64;
        let b_oracle = store_means.iter().map(|m| (m - gm) * (m - gm)).sum::<f64>()
            / store_means.len() as f64;
        let w_oracle = withins.iter().sum::<f64>() / withins.len() as f64;
        assert!((b3 - b_oracle).abs() < 1e-12);
        assert!((w3 - w_oracle).abs() < 1e-12);

        // Single store: error.
        assert!(variance_decomposition(&[(0, 0, 1.0), (0, 1, 2.0)]).is_err());
    }

    #[test]
    fn homogeneity_detection_grows_with_heterogeneity() {
        let mut rng = stream_rng(31, 0, 0, 0);
        let n = 60;
        let mut fractions = Vec::new();
        for scale in [0.0f64, 0.5, 2.0] {
            let estimates: Vec<f64> = (0..n).map(|_| 1.0 + scale * std_normal(&mut rng)).collect();
            let ses = vec![0.1; n];
            fractions.push(homogeneity_outside_fraction(&estimates, &ses));
        }
        assert!(fractions[0] <= fractions[1]);
        assert!(fractions[1] <= fractions[2]);
        assert!(fractions[2] > 0.5);
    }
}

