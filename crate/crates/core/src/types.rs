//! Shared domain types: cost parameters, demand parameters, panel rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perceived cost parameters and shock scale for one store-product.
///
/// `gamma_z` is sign-free: a positive value is a within-store substitution
/// offset when the product stocks out, a negative value a reputational cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    /// Holding cost per unit per day (currency).
    pub gamma_h: f64,
    /// Stockout event term (currency, sign-free).
    pub gamma_z: f64,
    /// Fixed cost per order (currency).
    pub gamma_f: f64,
    /// Cost per unit ordered (currency).
    pub gamma_c: f64,
    /// Scale of the extreme-value ordering-cost shocks (currency).
    pub sigma_eps: f64,
    /// One-day discount factor.
    pub beta: f64,
}

/// One-day discount factor used throughout: 0.95^(1/365).
pub fn default_daily_beta() -> f64 {
    0.95_f64.powf(1.0 / 365.0)
}

impl StructuralParams {
    pub fn new(
        gamma_h: f64,
        gamma_z: f64,
        gamma_f: f64,
        gamma_c: f64,
        sigma_eps: f64,
        beta: f64,
    ) -> Result<Self> {
        let p = StructuralParams {
            gamma_h,
            gamma_z,
            gamma_f,
            gamma_c,
            sigma_eps,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma_h.is_finite() || self.gamma_h < 0.0 {
            return Err(Error::invalid("gamma_h", "must be finite and >= 0"));
        }
        if !self.gamma_z.is_finite() {
            return Err(Error::invalid("gamma_z", "must be finite"));
        }
        if !self.gamma_f.is_finite() || self.gamma_f < 0.0 {
            return Err(Error::invalid("gamma_f", "must be finite and >= 0"));
        }
        if !self.gamma_c.is_finite() || self.gamma_c < 0.0 {
            return Err(Error::invalid("gamma_c", "must be finite and >= 0"));
        }
        if !self.sigma_eps.is_finite() || self.sigma_eps <= 0.0 {
            return Err(Error::invalid("sigma_eps", "must be finite and > 0"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("beta", "must lie strictly inside (0, 1)"));
        }
        Ok(())
    }

    /// Weight vector applied to the profit feature columns:
    /// (1, gamma_h, gamma_z, gamma_f, gamma_c) / sigma_eps.
    pub fn weight_vector(&self) -> [f64; 5] {
        let s = self.sigma_eps;
        [
            1.0 / s,
            self.gamma_h / s,
            self.gamma_z / s,
            self.gamma_f / s,
            self.gamma_c / s,
        ]
    }

    /// Dollar cost vector (gamma_h, gamma_z, gamma_f, gamma_c).
    pub fn cost_vector(&self) -> [f64; 4] {
        [self.gamma_h, self.gamma_z, self.gamma_f, self.gamma_c]
    }

    pub fn with_costs(&self, costs: [f64; 4]) -> Self {
        StructuralParams {
            gamma_h: costs[0],
            gamma_z: costs[1],
            gamma_f: costs[2],
            gamma_c: costs[3],
            ..*self
        }
    }
}

/// Sales-forecasting coefficients: log-expected demand is
/// `eta0_weekend * weekend + eta0_holiday * holiday + eta0_intercept
///  + eta_p * ln p + eta_q * ln(Q7 + 1)` and the variance is
/// `d_e * (1 + alpha * d_e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    pub eta0_weekend: f64,
    pub eta0_holiday: f64,
    pub eta0_intercept: f64,
    pub eta_p: f64,
    pub eta_q: f64,
    /// Over-dispersion; 0 is the Poisson limit.
    pub alpha: f64,
}

impl DemandParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("eta0_weekend", self.eta0_weekend),
            ("eta0_holiday", self.eta0_holiday),
            ("eta0_intercept", self.eta0_intercept),
            ("eta_p", self.eta_p),
            ("eta_q", self.eta_q),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid("alpha", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Expected demand at the given covariates. `trailing7` enters as ln(Q7 + 1).
    pub fn expected_demand(&self, price: f64, trailing7: f64, weekend: bool, holiday: bool) -> f64 {
        let log_de = self.eta0_intercept
            + self.eta0_weekend * (weekend as u8 as f64)
            + self.eta0_holiday * (holiday as u8 as f64)
            + self.eta_p * price.ln()
            + self.eta_q * (trailing7 + 1.0).ln();
        log_de.exp()
    }

    /// (d_e, sigma^2) at the given covariates.
    pub fn forecast(&self, price: f64, trailing7: f64, weekend: bool, holiday: bool) -> (f64, f64) {
        let de = self.expected_demand(price, trailing7, weekend, holiday);
        (de, de * (1.0 + self.alpha * de))
    }
}

/// Markup class; the Lerner index is tau / (1 + tau).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkupClass {
    pub markup: f64,
    pub lerner: f64,
}

impl MarkupClass {
    pub fn from_markup(markup: f64) -> Result<Self> {
        Ok(MarkupClass {
            markup,
            lerner: lerner_index(markup)?,
        })
    }

    /// Wholesale cost implied by a retail price: p * (1 - LI).
    pub fn wholesale_cost(&self, price: f64) -> f64 {
        price * (1.0 - self.lerner)
    }
}

/// Lerner index tau / (1 + tau) for a fixed percentage markup tau.
pub fn lerner_index(markup: f64) -> Result<f64> {
    if !markup.is_finite() || markup < 0.0 {
        return Err(Error::domain(format!(
            "markup must be finite and >= 0, got {markup}"
        )));
    }
    Ok(markup / (1.0 + markup))
}

/// One store-product-day observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub store_id: u32,
    pub product_id: u32,
    pub day: u32,
    /// Beginning-of-day stock k_t (units).
    pub inventory: u32,
    /// Units ordered y_t.
    pub order: u32,
    /// Realized demand d_t; only present on simulated panels.
    pub demand: Option<u32>,
    /// Units sold q_t = min(d_t, k_t).
    pub sales: u32,
    pub price: f64,
    /// Mean daily sales over days t-7..t-1.
    pub trailing7: f64,
    pub weekend: bool,
    pub holiday: bool,
}

impl PanelRow {
    /// Checks q = min(d, k) on rows where demand is recorded.
    pub fn sales_consistent(&self) -> bool {
        match self.demand {
            Some(d) => self.sales == d.min(self.inventory),
            None => true,
        }
    }
}

/// Checks the accounting identity k_{t+1} = k_t + y_t - q_t across consecutive
/// rows of one store-product panel sorted by day.
pub fn panel_accounting_holds(rows: &[PanelRow]) -> bool {
    rows.windows(2).all(|w| {
        w[1].inventory as i64 == w[0].inventory as i64 + w[0].order as i64 - w[0].sales as i64
    })
}
