//! Run configuration: one JSON file drives every subcommand; flags override
//! the seed, worker count, and output directory. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use invdp_core::sim::SimSettings;
use invdp_core::types::default_daily_beta;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: String,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: String,
    pub chain: ChainConfig,
    pub solver: SolverConfig,
    pub estimation: EstimationConfig,
    pub counterfactual: CounterfactualConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: "1".into(),
            seed: 20111001,
            workers: 1,
            out_dir: "out".into(),
            chain: ChainConfig::default(),
            solver: SolverConfig::default(),
            estimation: EstimationConfig::default(),
            counterfactual: CounterfactualConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub n_stores: u32,
    pub n_products: u32,
    pub n_days: u32,
    pub sigma_eps: f64,
    /// Scale multipliers on the default manager-noise standard deviations.
    pub manager_noise_mult: f64,
    pub education_gradient: f64,
    pub experience_gradient: f64,
    pub price_switch_prob: f64,
    pub holidays: Vec<u32>,
    pub k0: u32,
    pub burn_in: u32,
    pub pilot_days: u32,
}

impl Default for ChainConfig {
    fn default() -> Self {
        let s = SimSettings::default();
        ChainConfig {
            n_stores: 4,
            n_products: 2,
            n_days: 677,
            sigma_eps: 1.0,
            manager_noise_mult: 1.0,
            education_gradient: 0.8,
            experience_gradient: 0.6,
            price_switch_prob: 0.03,
            holidays: s.holidays,
            k0: s.k0,
            burn_in: s.burn_in,
            pilot_days: s.pilot_days,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub beta: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            beta: default_daily_beta(),
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Markup for the Lerner index used in the profit features, by product
    /// parity (spirits-like even products, wine-like odd products).
    pub markup_even: f64,
    pub markup_odd: f64,
    /// Minimum usable rows per unit.
    pub min_rows: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            markup_even: 0.655,
            markup_odd: 0.715,
            min_rows: 120,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterfactualConfig {
    /// Expected information age, in days, of the centralized regime.
    pub delay_days: u32,
    /// Run experiments from the planted truth tables instead of structural
    /// estimates (synthetic chains only).
    pub use_truth_tables: bool,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            delay_days: 7,
            use_truth_tables: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != "1" {
            return Err(format!(
                "schema_version: expected \"1\", got \"{}\"",
                self.schema_version
            ));
        }
        if self.workers == 0 {
            return Err("workers: must be at least 1".into());
        }
        if !(self.solver.beta > 0.0 && self.solver.beta < 1.0) {
            return Err(format!(
                "solver.beta: must lie strictly inside (0, 1), got {}",
                self.solver.beta
            ));
        }
        if !(self.solver.tol > 0.0) {
            return Err(format!("solver.tol: must be > 0, got {}", self.solver.tol));
        }
        if self.solver.max_sweeps == 0 {
            return Err("solver.max_sweeps: must be > 0".into());
        }
        if self.chain.n_stores == 0 || self.chain.n_products == 0 {
            return Err("chain.n_stores / chain.n_products: must be >= 1".into());
        }
        if self.chain.n_days < 30 {
            return Err(format!(
                "chain.n_days: must be >= 30, got {}",
                self.chain.n_days
            ));
        }
        if !(self.chain.sigma_eps > 0.0) {
            return Err(format!(
                "chain.sigma_eps: must be > 0, got {}",
                self.chain.sigma_eps
            ));
        }
        if !(0.0..=1.0).contains(&self.chain.price_switch_prob) {
            return Err(format!(
                "chain.price_switch_prob: must lie in [0, 1], got {}",
                self.chain.price_switch_prob
            ));
        }
        if self.chain.manager_noise_mult < 0.0 {
            return Err("chain.manager_noise_mult: must be >= 0".into());
        }
        if self.estimation.markup_even < 0.0 || self.estimation.markup_odd < 0.0 {
            return Err("estimation.markup_even/markup_odd: must be >= 0".into());
        }
        if self.counterfactual.delay_days > 365 {
            return Err("counterfactual.delay_days: must be <= 365".into());
        }
        if self.out_dir.is_empty() {
            return Err("out_dir: must not be empty".into());
        }
        Ok(())
    }

    pub fn sim_settings(&self) -> SimSettings {
        SimSettings {
            k0: self.chain.k0,
            burn_in: self.chain.burn_in,
            holidays: self.chain.holidays.clone(),
            pilot_days: self.chain.pilot_days,
        }
    }

    /// Stable hash of the effective configuration (FNV-1a over canonical
    /// JSON); embedded into every artifact for provenance. Output paths and
    /// worker counts do not affect results and are excluded.
    pub fn hash(&self) -> String {
        let mut science = self.clone();
        science.out_dir = String::new();
        science.workers = 0;
        let canon = serde_json::to_string(&science).unwrap_or_default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in canon.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    pub fn markup_for(&self, product_id: u32) -> f64 {
        if product_id % 2 == 0 {
            self.estimation.markup_even
        } else {
            self.estimation.markup_odd
        }
    }
}
