//! Flow-profit feature construction.
//!
//! The expected one-day profit (net of the ordering-cost shock) is linear in
//! the cost parameters: pi(y, x) / sigma_eps = h(y, x)' * gamma with
//! gamma = (1, gamma_h, gamma_z, gamma_f, gamma_c) / sigma_eps and feature row
//! h(y, x) = (LI * p * E[min(d, k)], -k, P(d > k), -1{y > 0}, -y).

use crate::error::Result;
use crate::negbin;
use crate::types::StructuralParams;

/// Number of profit-feature columns.
pub const N_FEATURES: usize = 5;

/// Feature row h(y, x) for order y at stock k, price p, demand (d_e, alpha).
pub fn profit_features(
    y: u32,
    k: u32,
    price: f64,
    d_e: f64,
    alpha: f64,
    lerner: f64,
) -> Result<[f64; N_FEATURES]> {
    let (e_min, stockout) = negbin::expected_min_and_stockout(k, d_e, alpha)?;
    Ok([
        lerner * price * e_min,
        -(k as f64),
        stockout,
        -((y > 0) as u8 as f64),
        -(y as f64),
    ])
}

/// Expected flow profit in currency units (excluding the epsilon shock).
pub fn flow_profit(features: &[f64; N_FEATURES], params: &StructuralParams) -> f64 {
    features[0]
        - params.gamma_h * -features[1]
        + params.gamma_z * features[2]
        - params.gamma_f * -features[3]
        - params.gamma_c * -features[4]
}

/// Flow profit in sigma_eps units: h(y, x)' * gamma.
pub fn flow_utility(features: &[f64; N_FEATURES], params: &StructuralParams) -> f64 {
    let w = params.weight_vector();
    features.iter().zip(w.iter()).map(|(h, g)| h * g).sum()
}
