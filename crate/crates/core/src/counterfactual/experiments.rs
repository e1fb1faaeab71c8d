//! Manager-component shutdowns and the centralization experiment.

use nalgebra::{DMatrix, DVector};

use crate::counterfactual::outcomes::{outcome_stats, OutcomeStats};
use crate::dp::solve::{ccp_from_values, ergodic_distribution, ergodic_from_kernel, solve_bellman, SolveOptions};
use crate::dp::{CcpTable, DiscreteModel};
use crate::error::Result;
use crate::types::StructuralParams;

/// Which manager components are removed in a shutdown run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShutdownComponent {
    Holding,
    Stockout,
    Fixed,
    Variable,
    All,
}

impl ShutdownComponent {
    pub const ALL_RUNS: [ShutdownComponent; 5] = [
        ShutdownComponent::Holding,
        ShutdownComponent::Stockout,
        ShutdownComponent::Fixed,
        ShutdownComponent::Variable,
        ShutdownComponent::All,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShutdownComponent::Holding => "h",
            ShutdownComponent::Stockout => "z",
            ShutdownComponent::Fixed => "f",
            ShutdownComponent::Variable => "c",
            ShutdownComponent::All => "all",
        }
    }

    fn mask(&self) -> [bool; 4] {
        match self {
            ShutdownComponent::Holding => [true, false, false, false],
            ShutdownComponent::Stockout => [false, true, false, false],
            ShutdownComponent::Fixed => [false, false, true, false],
            ShutdownComponent::Variable => [false, false, false, true],
            ShutdownComponent::All => [true, true, true, true],
        }
    }
}

/// Solves the model at `behavior` and evaluates ergodic outcomes with
/// `accounting` money flows.
pub fn outcomes_at(
    model: &DiscreteModel,
    behavior: &StructuralParams,
    accounting: &StructuralParams,
) -> Result<OutcomeStats> {
    let v = solve_bellman(model, behavior, &SolveOptions::default())?;
    let p = ccp_from_values(model, behavior, &v);
    let pi = ergodic_distribution(model, &p)?;
    outcome_stats(model, &p, &pi, accounting)
}

#[derive(Debug, Clone)]
pub struct ShutdownResult {
    pub which: ShutdownComponent,
    pub factual: OutcomeStats,
    pub counterfactual: OutcomeStats,
    /// Percent change in inventory cost (counterfactual vs factual), both
    /// evaluated with store-component accounting.
    pub inventory_cost_change_pct: f64,
    /// True when a negative counterfactual cost was floored at zero.
    pub floored: bool,
}

fn params_from(
    gamma: [f64; 4],
    sigma_eps: f64,
    beta: f64,
) -> Result<(StructuralParams, bool)> {
    let mut floored = false;
    let mut g = gamma;
    for idx in [0usize, 2, 3] {
        if g[idx] < 0.0 {
            g[idx] = 0.0;
            floored = true;
        }
    }
    Ok((
        StructuralParams::new(g[0], g[1], g[2], g[3], sigma_eps, beta)?,
        floored,
    ))
}

/// Removes the selected manager components, re-solves, and compares ergodic
/// outcomes. Money flows in both regimes use the store component.
pub fn shutdown_experiment(
    model: &DiscreteModel,
    gamma_sto: [f64; 4],
    gamma_man: [f64; 4],
    sigma_eps: f64,
    beta: f64,
    which: ShutdownComponent,
) -> Result<ShutdownResult> {
    let factual_gamma = [
        gamma_sto[0] + gamma_man[0],
        gamma_sto[1] + gamma_man[1],
        gamma_sto[2] + gamma_man[2],
        gamma_sto[3] + gamma_man[3],
    ];
    let mask = which.mask();
    let mut counter_gamma = factual_gamma;
    for p in 0..4 {
        if mask[p] {
            counter_gamma[p] = gamma_sto[p];
        }
    }

    let (factual_params, f1) = params_from(factual_gamma, sigma_eps, beta)?;
    let (counter_params, f2) = params_from(counter_gamma, sigma_eps, beta)?;
    let (accounting, _) = params_from(gamma_sto, sigma_eps, beta)?;

    let factual = outcomes_at(model, &factual_params, &accounting)?;
    let counterfactual = if counter_params == factual_params {
        factual
    } else {
        outcomes_at(model, &counter_params, &accounting)?
    };

    let change = if factual.inventory_cost.abs() > 0.0 {
        100.0 * (counterfactual.inventory_cost - factual.inventory_cost)
            / factual.inventory_cost.abs()
    } else {
        0.0
    };
    Ok(ShutdownResult {
        which,
        factual,
        counterfactual,
        inventory_cost_change_pct: change,
        floored: f1 || f2,
    })
}

/// Runs every shutdown component with one shared factual solve; results
/// match per-component `shutdown_experiment` calls exactly.
pub fn shutdown_suite(
    model: &DiscreteModel,
    gamma_sto: [f64; 4],
    gamma_man: [f64; 4],
    sigma_eps: f64,
    beta: f64,
) -> Result<Vec<ShutdownResult>> {
    let factual_gamma = [
        gamma_sto[0] + gamma_man[0],
        gamma_sto[1] + gamma_man[1],
        gamma_sto[2] + gamma_man[2],
        gamma_sto[3] + gamma_man[3],
    ];
    let (factual_params, f1) = params_from(factual_gamma, sigma_eps, beta)?;
    let (accounting, _) = params_from(gamma_sto, sigma_eps, beta)?;
    let v_fact = solve_bellman(model, &factual_params, &SolveOptions::default())?;
    let p_fact = ccp_from_values(model, &factual_params, &v_fact);
    let pi_fact = ergodic_distribution(model, &p_fact)?;
    let factual = outcome_stats(model, &p_fact, &pi_fact, &accounting)?;

    let mut out = Vec::with_capacity(ShutdownComponent::ALL_RUNS.len());
    for which in ShutdownComponent::ALL_RUNS {
        let mask = which.mask();
        let mut counter_gamma = factual_gamma;
        for p in 0..4 {
            if mask[p] {
                counter_gamma[p] = gamma_sto[p];
            }
        }
        let (counter_params, f2) = params_from(counter_gamma, sigma_eps, beta)?;
        let counterfactual = if counter_params == factual_params {
            factual
        } else {
            let v = crate::dp::solve::solve_bellman_from(
                model,
                &counter_params,
                &SolveOptions::default(),
                Some(&v_fact),
            )?;
            let p = ccp_from_values(model, &counter_params, &v);
            let pi = ergodic_distribution(model, &p)?;
            outcome_stats(model, &p, &pi, &accounting)?
        };
        let change = if factual.inventory_cost.abs() > 0.0 {
            100.0 * (counterfactual.inventory_cost - factual.inventory_cost)
                / factual.inventory_cost.abs()
        } else {
            0.0
        };
        out.push(ShutdownResult {
            which,
            factual,
            counterfactual,
            inventory_cost_change_pct: change,
            floored: f1 || f2,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CentralizationResult {
    pub centralized: OutcomeStats,
    pub decentralized: OutcomeStats,
    /// Decentralized minus centralized daily profit.
    pub gain_abs: f64,
    /// Percent gain from decentralization relative to centralized profit.
    pub gain_pct: f64,
    /// Percent change in inventory cost from decentralization.
    pub inv_cost_change_pct: f64,
}

/// Decentralized: behavior at gamma_sto + gamma_man with fresh information.
/// Centralized: behavior solved at gamma_sto, executed with the
/// trailing-sales cluster replaced by a stale snapshot whose expected age is
/// `delay_days` (the register refreshes with probability 1/delay_days each
/// day); delay 0 means fresh information and reproduces the plain chain
/// exactly. Profits in both regimes use gamma_sto.
pub fn centralization_experiment(
    model: &DiscreteModel,
    gamma_sto: [f64; 4],
    gamma_man: [f64; 4],
    sigma_eps: f64,
    beta: f64,
    delay_days: u32,
) -> Result<CentralizationResult> {
    let factual_gamma = [
        gamma_sto[0] + gamma_man[0],
        gamma_sto[1] + gamma_man[1],
        gamma_sto[2] + gamma_man[2],
        gamma_sto[3] + gamma_man[3],
    ];
    let (dec_params, _) = params_from(factual_gamma, sigma_eps, beta)?;
    let (sto_params, _) = params_from(gamma_sto, sigma_eps, beta)?;

    let decentralized = outcomes_at(model, &dec_params, &sto_params)?;

    let centralized = if delay_days == 0 {
        outcomes_at(model, &sto_params, &sto_params)?
    } else {
        let v = solve_bellman(model, &sto_params, &SolveOptions::default())?;
        let policy = ccp_from_values(model, &sto_params, &v);
        let (p_eff, pi_marg) = stale_information_evaluation(model, &policy, delay_days)?;
        outcome_stats(model, &p_eff, &pi_marg, &sto_params)?
    };

    let gain_abs = decentralized.flow_profit - centralized.flow_profit;
    let gain_pct = if centralized.flow_profit.abs() > 0.0 {
        100.0 * gain_abs / centralized.flow_profit.abs()
    } else {
        0.0
    };
    let inv_cost_change_pct = if centralized.inventory_cost.abs() > 0.0 {
        100.0 * (decentralized.inventory_cost - centralized.inventory_cost)
            / centralized.inventory_cost.abs()
    } else {
        0.0
    };
    Ok(CentralizationResult {
        centralized,
        decentralized,
        gain_abs,
        gain_pct,
        inv_cost_change_pct,
    })
}

/// Evaluates a policy that conditions on a stale trailing-sales cluster: the
/// state is augmented with a lag register holding the last transmitted
/// cluster, refreshed with probability 1 / delay. Returns the stationary
/// state marginal and the effective state-conditional action probabilities,
/// which plug straight into `outcome_stats`.
fn stale_information_evaluation(
    model: &DiscreteModel,
    policy: &CcpTable,
    delay_days: u32,
) -> Result<(CcpTable, DVector<f64>)> {
    let n = model.n_states();
    let ny = model.n_actions();
    let nq = model.space.lnq_centers.len();
    let rho = 1.0 / delay_days as f64;

    // Column index of a state under a swapped q-cluster.
    let swap_q = |x: usize, lag: usize| -> usize {
        let (k, p, _q, we, hol) = model.space.unpack(x);
        model.space.index(k, p, lag, we, hol)
    };
    let q_of = |x: usize| -> usize { model.space.unpack(x).2 };

    let na = n * nq;
    let mut m = DMatrix::<f64>::zeros(na, na);
    for x in 0..n {
        let q_now = q_of(x);
        for lag in 0..nq {
            let a = x * nq + lag;
            let obs_state = swap_q(x, lag);
            for y in 0..ny {
                let py = policy[(obs_state, y)];
                if py == 0.0 {
                    continue;
                }
                let f = &model.f_mats[y];
                for x2 in 0..n {
                    let fx = f[(x, x2)];
                    if fx == 0.0 {
                        continue;
                    }
                    // Register refreshes to today's cluster or stays.
                    m[(a, x2 * nq + q_now)] += py * fx * rho;
                    m[(a, x2 * nq + lag)] += py * fx * (1.0 - rho);
                }
            }
        }
    }
    let pi_aug = ergodic_from_kernel(&m)?;

    let mut pi_marg = DVector::<f64>::zeros(n);
    let mut p_eff = DMatrix::<f64>::zeros(n, ny);
    for x in 0..n {
        for lag in 0..nq {
            let w = pi_aug[x * nq + lag];
            pi_marg[x] += w;
            let obs_state = swap_q(x, lag);
            for y in 0..ny {
                p_eff[(x, y)] += w * policy[(obs_state, y)];
            }
        }
        if pi_marg[x] > 0.0 {
            for y in 0..ny {
                p_eff[(x, y)] /= pi_marg[x];
            }
        } else {
            p_eff[(x, 0)] = 1.0;
        }
    }
    Ok((p_eff, pi_marg))
}
