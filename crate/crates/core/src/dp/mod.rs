//! Discrete-state dynamic programming: state-space construction, transition
//! and payoff matrices, Bellman solver, CCPs, valuation, ergodic distribution.

pub mod discretize;
pub mod solve;
pub mod transition;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::N_FEATURES;
use crate::types::DemandParams;

/// Integrated values, one per state, in sigma_eps units.
pub type ValueVector = DVector<f64>;

/// Choice probabilities P(y|x), one row per state, one column per action.
pub type CcpTable = DMatrix<f64>;

/// Default inventory grid {0, 2, ..., 100}.
pub fn default_k_grid() -> Vec<u32> {
    (0..=50).map(|i| 2 * i).collect()
}

/// Default order grid {0, 6, ..., 48}.
pub fn default_y_grid() -> Vec<u32> {
    (0..=8).map(|i| 6 * i).collect()
}

/// Snaps a value to the nearest grid point (ties round up).
pub fn snap_to_grid(grid: &[u32], value: f64) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &g) in grid.iter().enumerate() {
        let d = (value - g as f64).abs();
        if d < best_d - 1e-12 || (d <= best_d + 1e-12 && g as f64 > value) {
            if d < best_d + 1e-12 {
                best = i;
                best_d = d.min(best_d);
            }
        }
    }
    best
}

/// Discretized state and action space shared by solver and estimators.
///
/// States are tuples (k, price cluster, lnQ cluster, weekend, holiday),
/// enumerated with the holiday flag fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpace {
    pub k_grid: Vec<u32>,
    pub y_grid: Vec<u32>,
    /// Price cluster centers (price levels), ascending.
    pub price_centers: Vec<f64>,
    /// Cluster centers of ln(Q7 + 1), ascending.
    pub lnq_centers: Vec<f64>,
}

impl StateSpace {
    pub fn n_states(&self) -> usize {
        self.k_grid.len() * self.price_centers.len() * self.lnq_centers.len() * 4
    }

    pub fn n_actions(&self) -> usize {
        self.y_grid.len()
    }

    pub fn index(&self, k_idx: usize, p_idx: usize, q_idx: usize, we: bool, hol: bool) -> usize {
        let np = self.price_centers.len();
        let nq = self.lnq_centers.len();
        (((k_idx * np + p_idx) * nq + q_idx) * 2 + we as usize) * 2 + hol as usize
    }

    pub fn unpack(&self, state: usize) -> (usize, usize, usize, bool, bool) {
        let np = self.price_centers.len();
        let nq = self.lnq_centers.len();
        let hol = state % 2 == 1;
        let rest = state / 2;
        let we = rest % 2 == 1;
        let rest = rest / 2;
        let q_idx = rest % nq;
        let rest = rest / nq;
        let p_idx = rest % np;
        let k_idx = rest / np;
        (k_idx, p_idx, q_idx, we, hol)
    }

    pub fn k_of(&self, state: usize) -> u32 {
        self.k_grid[self.unpack(state).0]
    }

    /// Maps a physical observation onto the grid.
    pub fn assign(&self, k: f64, price: f64, lnq: f64, we: bool, hol: bool) -> usize {
        let k_idx = snap_to_grid(&self.k_grid, k);
        let p_idx = nearest(&self.price_centers, price);
        let q_idx = nearest(&self.lnq_centers, lnq);
        self.index(k_idx, p_idx, q_idx, we, hol)
    }

    pub fn snap_action(&self, y: f64) -> usize {
        snap_to_grid(&self.y_grid, y)
    }

    /// Raw coordinate vector of a state: (k, price, lnQ, weekend, holiday).
    pub fn coordinates(&self, state: usize) -> [f64; 5] {
        let (k_idx, p_idx, q_idx, we, hol) = self.unpack(state);
        [
            self.k_grid[k_idx] as f64,
            self.price_centers[p_idx],
            self.lnq_centers[q_idx],
            we as u8 as f64,
            hol as u8 as f64,
        ]
    }
}

pub fn nearest(centers: &[f64], value: f64) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centers.iter().enumerate() {
        let d = (value - c).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Full discrete model: state space, per-action transition matrices F_x(y),
/// and per-action payoff feature matrices H(y) (|X| x 5).
///
/// H and F depend on the demand side only; cost parameters enter at solve
/// time, so one model serves every parameter vector.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub space: StateSpace,
    pub demand: DemandParams,
    pub lerner: f64,
    /// Row-stochastic |X| x |X| transition matrix per action.
    pub f_mats: Vec<DMatrix<f64>>,
    /// |X| x 5 payoff features per action.
    pub h_mats: Vec<DMatrix<f64>>,
    /// Expected demand per state (depends on exogenous coordinates only).
    pub d_e: DVector<f64>,
    /// Construction warnings (degenerate clusters, empty kernel cells).
    pub warnings: Vec<String>,
    n: usize,
    ny: usize,
}

impl DiscreteModel {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_actions(&self) -> usize {
        self.ny
    }

    /// Builds a model whose matrices line up with a panel-derived state space.
    pub fn from_parts(
        space: StateSpace,
        demand: DemandParams,
        lerner: f64,
        f_mats: Vec<DMatrix<f64>>,
        h_mats: Vec<DMatrix<f64>>,
        d_e: DVector<f64>,
    ) -> Result<Self> {
        let n = space.n_states();
        let ny = space.n_actions();
        Self::checked(space, demand, lerner, f_mats, h_mats, d_e, n, ny)
    }

    /// Builds a bare model from matrices alone (toy instances, oracles); the
    /// state count is taken from the matrices and the space is a stand-in.
    pub fn raw(f_mats: Vec<DMatrix<f64>>, h_mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if f_mats.is_empty() {
            return Err(Error::domain("at least one action required"));
        }
        let n = f_mats[0].nrows();
        let ny = f_mats.len();
        let space = StateSpace {
            k_grid: (0..n as u32).collect(),
            y_grid: (0..ny as u32).collect(),
            price_centers: vec![1.0],
            lnq_centers: vec![0.0],
        };
        let demand = DemandParams {
            eta0_weekend: 0.0,
            eta0_holiday: 0.0,
            eta0_intercept: 0.0,
            eta_p: 0.0,
            eta_q: 0.0,
            alpha: 0.0,
        };
        let d_e = DVector::from_element(n, 1.0);
        Self::checked(space, demand, 0.4, f_mats, h_mats, d_e, n, ny)
    }

    #[allow(clippy::too_many_arguments)]
    fn checked(
        space: StateSpace,
        demand: DemandParams,
        lerner: f64,
        f_mats: Vec<DMatrix<f64>>,
        h_mats: Vec<DMatrix<f64>>,
        d_e: DVector<f64>,
        n: usize,
        ny: usize,
    ) -> Result<Self> {
        if f_mats.len() != ny || h_mats.len() != ny {
            return Err(Error::domain("per-action matrix count mismatch"));
        }
        for f in &f_mats {
            if f.nrows() != n || f.ncols() != n {
                return Err(Error::domain("transition matrix shape mismatch"));
            }
        }
        for h in &h_mats {
            if h.nrows() != n || h.ncols() != N_FEATURES {
                return Err(Error::domain("payoff matrix shape mismatch"));
            }
        }
        Ok(DiscreteModel {
            space,
            demand,
            lerner,
            f_mats,
            h_mats,
            d_e,
            warnings: Vec::new(),
            n,
            ny,
        })
    }

    /// Row sums of every transition matrix; used by stochasticity checks.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for f in &self.f_mats {
            for i in 0..f.nrows() {
                let s: f64 = f.row(i).iter().sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_snapping_matches_stated_examples() {
        let k = default_k_grid();
        let y = default_y_grid();
        assert_eq!(k.len(), 51);
        assert_eq!(y.len(), 9);
        assert_eq!(k[snap_to_grid(&k, 101.0)], 100);
        assert_eq!(y[snap_to_grid(&y, 47.0)], 48);
        assert_eq!(k[snap_to_grid(&k, 0.0)], 0);
        assert_eq!(y[snap_to_grid(&y, 2.9)], 0);
        assert_eq!(y[snap_to_grid(&y, 3.1)], 6);
    }

    #[test]
    fn state_indexing_round_trips() {
        let space = StateSpace {
            k_grid: default_k_grid(),
            y_grid: default_y_grid(),
            price_centers: vec![24.3, 25.28],
            lnq_centers: vec![0.9, 1.4],
        };
        assert_eq!(space.n_states(), 51 * 2 * 2 * 4);
        for s in 0..space.n_states() {
            let (k, p, q, we, hol) = space.unpack(s);
            assert_eq!(space.index(k, p, q, we, hol), s);
        }
    }
}
