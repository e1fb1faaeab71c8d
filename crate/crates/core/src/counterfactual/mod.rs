//! Counterfactual experiments: cost decomposition into store and manager
//! components, manager-component shutdowns, centralized ordering with stale
//! demand information, and realized cost-to-revenue accounting.

pub mod decompose;
pub mod experiments;
pub mod outcomes;

pub use decompose::{decompose_costs, CostDecomposition, DecomposedRow, GammaEstimate};
pub use experiments::{
    centralization_experiment, shutdown_experiment, shutdown_suite, CentralizationResult,
    ShutdownComponent, ShutdownResult,
};
pub use outcomes::{cost_revenue_ratios, outcome_stats, CostRatios, OutcomeStats};
