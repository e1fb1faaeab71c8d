//! Structural toolkit for daily store-product inventory panels: forward
//! simulation under logit ordering behavior, Negative Binomial demand
//! estimation, reduced-form (S,s) threshold fits, two-step pseudo-likelihood
//! estimation of perceived costs, and counterfactual experiments on manager
//! heterogeneity and centralized ordering.

pub mod counterfactual;
pub mod demand;
pub mod dp;
pub mod error;
pub mod features;
pub mod negbin;
pub mod optim;
pub mod rng;
pub mod sim;
pub mod ss_rules;
pub mod stats;
pub mod structural;
pub mod types;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use types::{
    default_daily_beta, lerner_index, DemandParams, MarkupClass, PanelRow, StructuralParams,
};
