//! Transition-matrix construction. The stock coordinate moves analytically
//! through the demand pmf (k' = snap(k + y - min(d, k))); the exogenous
//! coordinates move through estimated or configured kernels. Sales and the
//! trailing-sales cluster are driven by the same demand draw, so their joint
//! distribution is built together.

use nalgebra::{DMatrix, DVector};

use crate::dp::{DiscreteModel, StateSpace};
use crate::error::Result;
use crate::features::profit_features;
use crate::negbin;
use crate::stats::quantile;
use crate::types::{DemandParams, PanelRow};

/// Exogenous-state kernels feeding `build_transitions`.
#[derive(Debug, Clone)]
pub struct ExogKernels {
    /// Price-cluster Markov matrix (rows sum to 1).
    pub price: DMatrix<f64>,
    /// lnQ-cluster kernel conditional on the realized-sales tercile.
    pub q_by_tercile: [DMatrix<f64>; 3],
    /// Sales tercile boundaries (t1, t2).
    pub sales_terciles: [f64; 2],
    /// Weekend flag kernel.
    pub weekend: [[f64; 2]; 2],
    /// Holiday flag kernel.
    pub holiday: [[f64; 2]; 2],
    pub warnings: Vec<String>,
}

/// Marginal one-step kernel of the weekend flag implied by the mod-7 cycle
/// (weekend = day mod 7 in {5, 6}).
pub fn weekend_cycle_kernel() -> [[f64; 2]; 2] {
    [[4.0 / 5.0, 1.0 / 5.0], [1.0 / 2.0, 1.0 / 2.0]]
}

pub fn tercile_of(sales: f64, bounds: &[f64; 2]) -> usize {
    if sales <= bounds[0] {
        0
    } else if sales <= bounds[1] {
        1
    } else {
        2
    }
}

fn normalize_rows_or(mat: &mut DMatrix<f64>, fallback: &DMatrix<f64>, warnings: &mut Vec<String>, label: &str) {
    for i in 0..mat.nrows() {
        let s: f64 = mat.row(i).iter().sum();
        if s > 0.0 {
            for j in 0..mat.ncols() {
                mat[(i, j)] /= s;
            }
        } else {
            warnings.push(format!("empty {label} kernel cell (row {i}); using fallback"));
            for j in 0..mat.ncols() {
                mat[(i, j)] = fallback[(i, j)];
            }
        }
    }
}

impl ExogKernels {
    /// Estimates price and trailing-sales kernels from consecutive rows of a
    /// panel (one store-product, day-sorted). Calendar kernels come from the
    /// mod-7 cycle and the observed holiday flags.
    pub fn from_panel(rows: &[PanelRow], space: &StateSpace) -> Result<Self> {
        let np = space.price_centers.len();
        let nq = space.lnq_centers.len();
        let mut warnings = Vec::new();

        let sales: Vec<f64> = rows.iter().map(|r| r.sales as f64).collect();
        let bounds = [quantile(&sales, 1.0 / 3.0), quantile(&sales, 2.0 / 3.0)];

        let mut price_counts = DMatrix::<f64>::zeros(np, np);
        let mut q_counts = [
            DMatrix::<f64>::zeros(nq, nq),
            DMatrix::<f64>::zeros(nq, nq),
            DMatrix::<f64>::zeros(nq, nq),
        ];
        let mut q_any = DMatrix::<f64>::zeros(nq, nq);
        let mut hol_counts = [[0.0f64; 2]; 2];

        for w in rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.store_id != b.store_id || a.product_id != b.product_id || b.day != a.day + 1 {
                continue;
            }
            let p0 = crate::dp::nearest(&space.price_centers, a.price);
            let p1 = crate::dp::nearest(&space.price_centers, b.price);
            price_counts[(p0, p1)] += 1.0;

            let q0 = crate::dp::nearest(&space.lnq_centers, (a.trailing7 + 1.0).ln());
            let q1 = crate::dp::nearest(&space.lnq_centers, (b.trailing7 + 1.0).ln());
            let t = tercile_of(a.sales as f64, &bounds);
            q_counts[t][(q0, q1)] += 1.0;
            q_any[(q0, q1)] += 1.0;

            hol_counts[a.holiday as usize][b.holiday as usize] += 1.0;
        }

        let uniform_p = DMatrix::<f64>::from_element(np, np, 1.0 / np as f64);
        let mut price = price_counts;
        normalize_rows_or(&mut price, &uniform_p, &mut warnings, "price");

        let uniform_q = DMatrix::<f64>::from_element(nq, nq, 1.0 / nq as f64);
        let mut q_uncond = q_any;
        normalize_rows_or(&mut q_uncond, &uniform_q, &mut warnings, "lnQ (unconditional)");
        let mut q_by_tercile = [uniform_q.clone(), uniform_q.clone(), uniform_q];
        for (t, counts) in q_counts.into_iter().enumerate() {
            let mut m = counts;
            normalize_rows_or(&mut m, &q_uncond, &mut warnings, &format!("lnQ tercile {t}"));
            q_by_tercile[t] = m;
        }

        // Holiday kernel; absorb an unobserved holiday row into "leave".
        let mut holiday = [[1.0, 0.0], [1.0, 0.0]];
        for from in 0..2 {
            let s = hol_counts[from][0] + hol_counts[from][1];
            if s > 0.0 {
                holiday[from] = [hol_counts[from][0] / s, hol_counts[from][1] / s];
            } else if from == 1 {
                warnings.push("no observed holiday transitions; holidays exit to non-holiday".into());
            }
        }

        Ok(ExogKernels {
            price,
            q_by_tercile,
            sales_terciles: bounds,
            weekend: weekend_cycle_kernel(),
            holiday,
            warnings,
        })
    }
}

/// Builds the full discrete model: transition matrices F_x(y) and payoff
/// features H(y) on the given state space.
pub fn build_transitions(
    space: StateSpace,
    demand: DemandParams,
    lerner: f64,
    kernels: &ExogKernels,
) -> Result<DiscreteModel> {
    demand.validate()?;
    let n = space.n_states();
    let ny = space.n_actions();
    let np = space.price_centers.len();
    let nq = space.lnq_centers.len();

    // Demand pmf per exogenous combination (price, lnQ, weekend, holiday).
    let mut pmfs: Vec<Vec<f64>> = Vec::with_capacity(np * nq * 4);
    let mut de_by_exog: Vec<f64> = Vec::with_capacity(np * nq * 4);
    for p_idx in 0..np {
        for q_idx in 0..nq {
            for we in [false, true] {
                for hol in [false, true] {
                    let price = space.price_centers[p_idx];
                    let q7 = space.lnq_centers[q_idx].exp() - 1.0;
                    let de = demand.expected_demand(price, q7.max(0.0), we, hol);
                    pmfs.push(negbin::pmf_truncated(de, demand.alpha)?);
                    de_by_exog.push(de);
                }
            }
        }
    }
    let exog_of = |p_idx: usize, q_idx: usize, we: bool, hol: bool| {
        ((p_idx * nq + q_idx) * 2 + we as usize) * 2 + hol as usize
    };

    let mut f_mats: Vec<DMatrix<f64>> = (0..ny).map(|_| DMatrix::zeros(n, n)).collect();
    let mut h_mats: Vec<DMatrix<f64>> = (0..ny).map(|_| DMatrix::zeros(n, 5)).collect();
    let mut d_e = DVector::<f64>::zeros(n);

    let nk = space.k_grid.len();
    for x in 0..n {
        let (k_idx, p_idx, q_idx, we, hol) = space.unpack(x);
        let k_val = space.k_grid[k_idx];
        let e = exog_of(p_idx, q_idx, we, hol);
        let pmf = &pmfs[e];
        let de = de_by_exog[e];
        d_e[x] = de;

        for (y_idx, &y_val) in space.y_grid.iter().enumerate() {
            // Aggregate demand mass onto (k', tercile) pairs.
            let mut mass = vec![0.0f64; nk * 3];
            for (d, &pd) in pmf.iter().enumerate() {
                let sold = (d as u32).min(k_val);
                let k_next = k_val + y_val - sold;
                let k_next_idx = crate::dp::snap_to_grid(&space.k_grid, k_next as f64);
                let t = tercile_of(sold as f64, &kernels.sales_terciles);
                mass[k_next_idx * 3 + t] += pd;
            }

            let row = x;
            for (slot, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let k_next_idx = slot / 3;
                let t = slot % 3;
                let qk = &kernels.q_by_tercile[t];
                for p_next in 0..np {
                    let pp = kernels.price[(p_idx, p_next)];
                    if pp == 0.0 {
                        continue;
                    }
                    for q_next in 0..nq {
                        let pq = qk[(q_idx, q_next)];
                        if pq == 0.0 {
                            continue;
                        }
                        for we_next in 0..2 {
                            let pw = kernels.weekend[we as usize][we_next];
                            if pw == 0.0 {
                                continue;
                            }
                            for hol_next in 0..2 {
                                let ph = kernels.holiday[hol as usize][hol_next];
                                if ph == 0.0 {
                                    continue;
                                }
                                let col = space.index(
                                    k_next_idx,
                                    p_next,
                                    q_next,
                                    we_next == 1,
                                    hol_next == 1,
                                );
                                f_mats[y_idx][(row, col)] += m * pp * pq * pw * ph;
                            }
                        }
                    }
                }
            }

            // Renormalize the row (pmf truncation leaves ~1e-12 tail mass).
            let s: f64 = f_mats[y_idx].row(row).iter().sum();
            if s > 0.0 {
                for c in 0..n {
                    f_mats[y_idx][(row, c)] /= s;
                }
            }

            let h = profit_features(
                y_val,
                k_val,
                space.price_centers[p_idx],
                de,
                demand.alpha,
                lerner,
            )?;
            for (j, v) in h.iter().enumerate() {
                h_mats[y_idx][(row, j)] = *v;
            }
        }
    }

    let mut model = DiscreteModel::from_parts(space, demand, lerner, f_mats, h_mats, d_e)?;
    model.warnings = kernels.warnings.clone();
    Ok(model)
}
