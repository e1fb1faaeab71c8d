//! Ergodic outcome statistics and realized cost-to-revenue accounting.

use nalgebra::DVector;

use crate::dp::{CcpTable, DiscreteModel};
use crate::error::{Error, Result};
use crate::features;
use crate::negbin;
use crate::types::{PanelRow, StructuralParams};

/// Long-run inventory outcomes under a policy and its stationary
/// distribution. Ratios are in days of average sales; money amounts use the
/// accounting parameters and exclude the ordering-cost shock.
#[derive(Debug, Clone, Copy)]
pub struct OutcomeStats {
    pub stockout_frequency: f64,
    pub ordering_frequency: f64,
    pub inv_to_sales: f64,
    pub inv_to_sales_after_order: f64,
    pub inv_to_sales_before_order: f64,
    pub mean_daily_sales: f64,
    pub mean_inventory: f64,
    /// Expected per-day flow profit (dollars, epsilon excluded).
    pub flow_profit: f64,
    /// Expected per-day inventory-management cost: holding + fixed +
    /// variable + the stockout term (signed as in the accounting tables).
    pub inventory_cost: f64,
}

/// Expectations under the stationary distribution `pi` of the chain induced
/// by `p_behavior`; money flows use `accounting` (the store component in the
/// centralization runs).
pub fn outcome_stats(
    model: &DiscreteModel,
    p_behavior: &CcpTable,
    pi: &DVector<f64>,
    accounting: &StructuralParams,
) -> Result<OutcomeStats> {
    let n = model.n_states();
    let ny = model.n_actions();
    if pi.len() != n || p_behavior.nrows() != n {
        return Err(Error::domain("dimension mismatch in outcome_stats"));
    }

    let mut stockout = 0.0;
    let mut ordering = 0.0;
    let mut sales = 0.0;
    let mut stock = 0.0;
    let mut pre_k = 0.0; // E[k ; order]
    let mut post_k = 0.0; // E[k + y ; order]
    let mut p_order_mass = 0.0;
    let mut profit = 0.0;
    let mut inv_cost = 0.0;

    for x in 0..n {
        let w = pi[x];
        if w == 0.0 {
            continue;
        }
        let k = model.space.k_of(x) as f64;
        let (e_min, p_so) = negbin::expected_min_and_stockout(
            model.space.k_of(x),
            model.d_e[x],
            model.demand.alpha,
        )?;
        stockout += w * p_so;
        sales += w * e_min;
        stock += w * k;
        let p_order = 1.0 - p_behavior[(x, 0)];
        ordering += w * p_order;
        p_order_mass += w * p_order;
        pre_k += w * p_order * k;

        for y in 0..ny {
            let pxy = p_behavior[(x, y)];
            if pxy == 0.0 {
                continue;
            }
            let y_units = model.space.y_grid[y] as f64;
            if y > 0 {
                post_k += w * pxy * (k + y_units);
            }
            let h = [
                model.h_mats[y][(x, 0)],
                model.h_mats[y][(x, 1)],
                model.h_mats[y][(x, 2)],
                model.h_mats[y][(x, 3)],
                model.h_mats[y][(x, 4)],
            ];
            profit += w * pxy * features::flow_profit(&h, accounting);
            inv_cost += w
                * pxy
                * (accounting.gamma_h * k
                    + accounting.gamma_z * p_so
                    + accounting.gamma_f * ((y > 0) as u8 as f64)
                    + accounting.gamma_c * y_units);
        }
    }

    // Zero expected sales leaves the ratios undefined (NaN) while the
    // frequencies stay well-defined.
    let ratio_denom = if sales > 0.0 { sales } else { f64::NAN };

    Ok(OutcomeStats {
        stockout_frequency: stockout,
        ordering_frequency: ordering,
        inv_to_sales: stock / ratio_denom,
        inv_to_sales_after_order: if p_order_mass > 0.0 {
            (post_k / p_order_mass) / ratio_denom
        } else {
            f64::NAN
        },
        inv_to_sales_before_order: if p_order_mass > 0.0 {
            (pre_k / p_order_mass) / ratio_denom
        } else {
            f64::NAN
        },
        mean_daily_sales: sales,
        mean_inventory: stock,
        flow_profit: profit,
        inventory_cost: inv_cost,
    })
}

/// Realized cost-to-revenue ratios over a panel. Stockout events are days
/// with demand above beginning stock; on panels without a demand column the
/// proxy is selling the shelf empty.
#[derive(Debug, Clone, Copy)]
pub struct CostRatios {
    pub holding: f64,
    pub stockout: f64,
    pub fixed: f64,
    pub variable: f64,
    pub total: f64,
}

pub fn cost_revenue_ratios(rows: &[PanelRow], params: &StructuralParams) -> Result<CostRatios> {
    let mut revenue = 0.0;
    let mut stock_days = 0.0;
    let mut stockouts = 0.0;
    let mut orders = 0.0;
    let mut units = 0.0;
    for r in rows {
        revenue += r.price * r.sales as f64;
        stock_days += r.inventory as f64;
        let so = match r.demand {
            Some(d) => d > r.inventory,
            None => r.inventory > 0 && r.sales == r.inventory,
        };
        stockouts += so as u8 as f64;
        orders += (r.order > 0) as u8 as f64;
        units += r.order as f64;
    }
    if revenue <= 0.0 {
        return Err(Error::UndefinedRatio("panel revenue is zero".into()));
    }
    let holding = params.gamma_h * stock_days / revenue;
    let stockout = params.gamma_z * stockouts / revenue;
    let fixed = params.gamma_f * orders / revenue;
    let variable = params.gamma_c * units / revenue;
    Ok(CostRatios {
        holding,
        stockout,
        fixed,
        variable,
        total: holding + stockout + fixed + variable,
    })
}
