//! Forward simulation of daily store-product panels under logit ordering
//! behavior, and synthesis of multi-store chains with planted store and
//! manager cost heterogeneity.

pub mod chain;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::discretize::kmeans_1d;
use crate::dp::solve::{
    action_values, ccp_from_values, flow_utilities, solve_bellman_from, SolveOptions,
};
use crate::dp::transition::{build_transitions, weekend_cycle_kernel, ExogKernels};
use crate::dp::{CcpTable, DiscreteModel, StateSpace, ValueVector};
use crate::error::{Error, Result};
use crate::negbin;
use crate::rng::{gumbel, stream_rng};
use crate::types::{DemandParams, MarkupClass, PanelRow, StructuralParams};

/// Retail price process: a discrete support with a daily switch probability
/// (uniform over the other levels on a switch day).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceProcess {
    pub levels: Vec<f64>,
    pub switch_prob: f64,
}

impl PriceProcess {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::invalid("price.levels", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return Err(Error::invalid("price.switch_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Markov matrix over the levels; rows sum to 1.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let n = self.levels.len();
        if n == 1 {
            return DMatrix::from_element(1, 1, 1.0);
        }
        let off = self.switch_prob / (n as f64 - 1.0);
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - self.switch_prob } else { off })
    }

    fn step<R: Rng>(&self, current: usize, rng: &mut R) -> usize {
        let n = self.levels.len();
        if n > 1 && rng.gen::<f64>() < self.switch_prob {
            let mut next = rng.gen_range(0..n - 1);
            if next >= current {
                next += 1;
            }
            next
        } else {
            current
        }
    }
}

/// Calendar and initialization settings shared by simulations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSettings {
    /// Initial stock.
    pub k0: u32,
    /// Days discarded from estimation samples (trailing-sales history).
    pub burn_in: u32,
    /// Holiday days-of-year (day_index mod 365).
    pub holidays: Vec<u32>,
    /// Pilot simulation length used to discretize the trailing-sales state.
    pub pilot_days: u32,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            k0: 24,
            burn_in: 14,
            holidays: vec![1, 90, 185, 359],
            pilot_days: 2000,
        }
    }
}

pub fn is_weekend(day: u32) -> bool {
    matches!(day % 7, 5 | 6)
}

pub fn is_holiday(day: u32, holidays: &[u32]) -> bool {
    holidays.contains(&(day % 365))
}

/// Holiday-flag kernel implied by a calendar over a horizon.
fn holiday_kernel(holidays: &[u32], horizon: u32) -> [[f64; 2]; 2] {
    let mut counts = [[0.0f64; 2]; 2];
    for day in 0..horizon.max(730).saturating_sub(1) {
        let a = is_holiday(day, holidays) as usize;
        let b = is_holiday(day + 1, holidays) as usize;
        counts[a][b] += 1.0;
    }
    let mut kernel = [[1.0, 0.0], [1.0, 0.0]];
    for (from, row) in counts.iter().enumerate() {
        let s = row[0] + row[1];
        if s > 0.0 {
            kernel[from] = [row[0] / s, row[1] / s];
        }
    }
    kernel
}

/// Steady-state trailing sales: the fixed point Q = E[d | p, Q].
pub fn steady_state_trailing(demand: &DemandParams, price: f64) -> f64 {
    let mut q = 1.0f64;
    for _ in 0..300 {
        let next = demand.expected_demand(price, q, false, false);
        if (next - q).abs() < 1e-12 {
            return next.max(1e-9);
        }
        q = next;
    }
    q.max(1e-9)
}

/// Solved behavioral model for one store-product: the discrete model the
/// ordering agent perceives, the solved value vector, and the implied
/// action-value matrix used for draw-by-draw choices.
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub model: DiscreteModel,
    pub params: StructuralParams,
    pub value: ValueVector,
    /// u_y + beta F_y V, one column per action.
    pub choice_values: DMatrix<f64>,
}

impl AgentModel {
    pub fn ccp(&self) -> CcpTable {
        ccp_from_values(&self.model, &self.params, &self.value)
    }

    /// Re-solves the same model at different cost parameters.
    pub fn resolve(&self, params: &StructuralParams) -> Result<AgentModel> {
        let v = solve_bellman_from(
            &self.model,
            params,
            &SolveOptions::default(),
            Some(&self.value),
        )?;
        let utilities = flow_utilities(&self.model, params);
        let choice_values = action_values(&self.model, &utilities, params.beta, &v);
        Ok(AgentModel {
            model: self.model.clone(),
            params: *params,
            value: v,
            choice_values,
        })
    }

    /// Builds the perceived model from primitives. The trailing-sales
    /// clusters and their kernel are not known analytically, so a pilot
    /// simulation under a provisional discretization supplies them; the
    /// final model is re-discretized and re-solved on the pilot panel.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        structural: &StructuralParams,
        demand: &DemandParams,
        markup: &MarkupClass,
        price: &PriceProcess,
        settings: &SimSettings,
        seed: u64,
        store: u32,
        product: u32,
    ) -> Result<AgentModel> {
        structural.validate()?;
        demand.validate()?;
        price.validate()?;

        let p_ref = price.levels[0];
        let q_star = steady_state_trailing(demand, p_ref);
        let lnq = |q: f64| (q + 1.0).ln();

        // Provisional discretization around the steady state.
        let space0 = StateSpace {
            k_grid: crate::dp::default_k_grid(),
            y_grid: crate::dp::default_y_grid(),
            price_centers: price.levels.clone(),
            lnq_centers: if q_star > 0.05 {
                vec![lnq(0.7 * q_star), lnq(1.4 * q_star)]
            } else {
                vec![lnq(q_star)]
            },
        };
        let nq0 = space0.lnq_centers.len();
        let persist = |p_same: f64, n: usize| {
            DMatrix::from_fn(n, n, move |i, j| {
                if i == j {
                    p_same
                } else {
                    (1.0 - p_same) / (n as f64 - 1.0).max(1.0)
                }
            })
        };
        // Sales terciles from the stationary demand distribution.
        let pmf_star = negbin::pmf_truncated(
            demand
                .expected_demand(p_ref, q_star, false, false)
                .max(1e-9),
            demand.alpha,
        )?;
        let cdf_quantile = |p: f64| -> f64 {
            let mut cum = 0.0;
            for (d, &m) in pmf_star.iter().enumerate() {
                cum += m;
                if cum >= p {
                    return d as f64;
                }
            }
            (pmf_star.len() - 1) as f64
        };
        let kernels0 = ExogKernels {
            price: price.transition_matrix(),
            q_by_tercile: [
                persist(0.85, nq0),
                persist(0.75, nq0),
                persist(0.85, nq0),
            ],
            sales_terciles: [cdf_quantile(1.0 / 3.0), cdf_quantile(2.0 / 3.0)],
            weekend: weekend_cycle_kernel(),
            holiday: holiday_kernel(&settings.holidays, 730),
            warnings: vec![],
        };
        let model0 = build_transitions(space0, *demand, markup.lerner, &kernels0)?;
        let v0 = solve_bellman_from(&model0, structural, &SolveOptions::default(), None)?;
        let utilities0 = flow_utilities(&model0, structural);
        let agent0 = AgentModel {
            choice_values: action_values(&model0, &utilities0, structural.beta, &v0),
            model: model0,
            params: *structural,
            value: v0,
        };

        // Two pilot rounds: the first pilot runs under the provisional
        // policy, and its trailing-sales distribution reflects provisional
        // behavior. Rebuilding and simulating once more lets the cluster
        // centers and kernels settle on the distribution the final policy
        // generates.
        let mut agent = agent0;
        for round in 0..2u64 {
            let mut pilot_rng = stream_rng(seed, store, product, 0x70696c6f74 + round);
            let pilot = simulate_with_agent(
                &agent,
                demand,
                price,
                settings,
                settings.pilot_days,
                store,
                product,
                &mut pilot_rng,
            )?;

            let lnqs: Vec<f64> = pilot.iter().map(|r| (r.trailing7 + 1.0).ln()).collect();
            let lnq_fit = kmeans_1d(&lnqs, 2, seed ^ 0x51 ^ round)?;
            let space = StateSpace {
                k_grid: crate::dp::default_k_grid(),
                y_grid: crate::dp::default_y_grid(),
                price_centers: price.levels.clone(),
                lnq_centers: lnq_fit.centers,
            };
            let mut kernels = ExogKernels::from_panel(&pilot, &space)?;
            // The price process is known here; use it rather than its estimate.
            kernels.price = price.transition_matrix();
            kernels.weekend = weekend_cycle_kernel();
            kernels.holiday = holiday_kernel(&settings.holidays, 730);

            let model = build_transitions(space, *demand, markup.lerner, &kernels)?;
            let warm = if model.n_states() == agent.value.len() {
                Some(agent.value.clone())
            } else {
                None
            };
            let v =
                solve_bellman_from(&model, structural, &SolveOptions::default(), warm.as_ref())?;
            let utilities = flow_utilities(&model, structural);
            agent = AgentModel {
                choice_values: action_values(&model, &utilities, structural.beta, &v),
                model,
                params: *structural,
                value: v,
            };
        }
        Ok(agent)
    }
}

/// Simulates one store-product panel from known parameters. Builds the
/// behavioral model internally; use `AgentModel::build` +
/// `simulate_panel_with_model` to amortize the solve across replications.
pub fn simulate_panel(
    structural: &StructuralParams,
    demand: &DemandParams,
    markup: &MarkupClass,
    price: &PriceProcess,
    n_days: u32,
    seed: u64,
    settings: &SimSettings,
) -> Result<Vec<PanelRow>> {
    if n_days == 0 {
        return Err(Error::invalid("n_days", "must be at least 1"));
    }
    let agent = AgentModel::build(structural, demand, markup, price, settings, seed, 0, 0)?;
    simulate_panel_with_model(&agent, demand, price, n_days, seed, settings, 0, 0)
}

/// Simulates a panel with a pre-built behavioral model.
#[allow(clippy::too_many_arguments)]
pub fn simulate_panel_with_model(
    agent: &AgentModel,
    demand: &DemandParams,
    price: &PriceProcess,
    n_days: u32,
    seed: u64,
    settings: &SimSettings,
    store: u32,
    product: u32,
) -> Result<Vec<PanelRow>> {
    let mut rng = stream_rng(seed, store, product, 0x73696d);
    simulate_with_agent(
        agent, demand, price, settings, n_days, store, product, &mut rng,
    )
}

#[allow(clippy::too_many_arguments)]
fn simulate_with_agent(
    agent: &AgentModel,
    demand: &DemandParams,
    price: &PriceProcess,
    settings: &SimSettings,
    n_days: u32,
    store: u32,
    product: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PanelRow>> {
    let ny = agent.model.n_actions();
    let y_grid = agent.model.space.y_grid.clone();
    let mut k: u32 = settings.k0;
    let mut price_idx = 0usize;
    let q0 = steady_state_trailing(demand, price.levels[price_idx]);
    let mut buffer = vec![q0; 7];
    let mut rows = Vec::with_capacity(n_days as usize);

    for day in 0..n_days {
        let weekend = is_weekend(day);
        let holiday = is_holiday(day, &settings.holidays);
        let p = price.levels[price_idx];
        let trailing7 = buffer.iter().sum::<f64>() / 7.0;

        // Order choice: argmax over the grid of perceived action values plus
        // extreme-value shocks (already in sigma_eps units).
        let x = agent
            .model
            .space
            .assign(k as f64, p, (trailing7 + 1.0).ln(), weekend, holiday);
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for y_idx in 0..ny {
            let v = agent.choice_values[(x, y_idx)] + gumbel(rng);
            if v > best_v {
                best_v = v;
                best = y_idx;
            }
        }
        let order = y_grid[best];

        // Demand and sales from the true (continuous) state.
        let d_e = demand.expected_demand(p, trailing7, weekend, holiday);
        let d = if d_e > 1e-10 {
            negbin::sample(d_e, demand.alpha, rng.gen())?
        } else {
            0
        };
        let sales = d.min(k);

        rows.push(PanelRow {
            store_id: store,
            product_id: product,
            day,
            inventory: k,
            order,
            demand: Some(d),
            sales,
            price: p,
            trailing7,
            weekend,
            holiday,
        });

        k = k + order - sales;
        buffer.rotate_left(1);
        buffer[6] = sales as f64;
        price_idx = price.step(price_idx, rng);
    }
    Ok(rows)
}

/// Drops the burn-in prefix used to seed the trailing-sales state.
pub fn estimation_sample(rows: &[PanelRow], burn_in: u32) -> Vec<PanelRow> {
    rows.iter().filter(|r| r.day >= burn_in).cloned().collect()
}

/// Simulates a (state, action) path directly on a discrete model: choices by
/// extreme-value argmax over the agent's action values, states by the
/// model's own transition matrices. This is the exact data-generating
/// process of the discrete model, with no off-grid approximation; Monte
/// Carlo studies of the estimators use it so that estimator error is not
/// confounded with state-space coarseness.
pub fn simulate_discrete_path(
    agent: &AgentModel,
    n_days: u32,
    seed: u64,
    store: u32,
    product: u32,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(seed, store, product, 0x64697363);
    let n = agent.model.n_states();
    let ny = agent.model.n_actions();
    let mut x = n / 2;
    let mut states = Vec::with_capacity(n_days as usize);
    let mut actions = Vec::with_capacity(n_days as usize);
    // Settle into the ergodic region before recording.
    let warmup = 200u32;
    for step in 0..(n_days + warmup) {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for y in 0..ny {
            let v = agent.choice_values[(x, y)] + gumbel(&mut rng);
            if v > best_v {
                best_v = v;
                best = y;
            }
        }
        if step >= warmup {
            states.push(x);
            actions.push(best);
        }
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut next = n - 1;
        for c in 0..n {
            cum += agent.model.f_mats[best][(x, c)];
            if u <= cum {
                next = c;
                break;
            }
        }
        x = next;
    }
    (states, actions)
}
