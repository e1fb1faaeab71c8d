//! State-space discretization: k-means clustering of the exogenous variables
//! (price and log trailing sales) and fixed grids for stock and orders.

use rand::Rng;

use crate::dp::StateSpace;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::PanelRow;

/// One-dimensional k-means with squared Euclidean distance and k-means++
/// initialization. Returns sorted centers and per-sample assignment.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub centers: Vec<f64>,
    pub assignment: Vec<usize>,
    pub within_ss: f64,
    /// Share of total variance captured by cluster membership.
    pub between_share: f64,
}

pub fn kmeans_1d(values: &[f64], n_clusters: usize, seed: u64) -> Result<KmeansFit> {
    if values.is_empty() {
        return Err(Error::InsufficientData("k-means on empty data".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let total_ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();

    // Degenerate variable: collapse to a single cluster.
    if total_ss < 1e-12 * n as f64 || n_clusters <= 1 {
        return Ok(KmeansFit {
            centers: vec![mean],
            assignment: vec![0; n],
            within_ss: total_ss,
            between_share: 1.0,
        });
    }
    let k = n_clusters.min(n);
    let mut rng = stream_rng(seed, 0, 0, 0x6b6d65616e73);

    let mut best: Option<KmeansFit> = None;
    for _restart in 0..4 {
        // k-means++ seeding.
        let mut centers = Vec::with_capacity(k);
        centers.push(values[rng.gen_range(0..n)]);
        while centers.len() < k {
            let d2: Vec<f64> = values
                .iter()
                .map(|v| {
                    centers
                        .iter()
                        .map(|c| (v - c).powi(2))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            if total <= 0.0 {
                centers.push(values[rng.gen_range(0..n)]);
                continue;
            }
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            centers.push(values[chosen]);
        }

        // Lloyd iterations.
        let mut assignment = vec![0usize; n];
        for _ in 0..200 {
            let mut moved = false;
            for (i, v) in values.iter().enumerate() {
                let mut bi = 0;
                let mut bd = f64::INFINITY;
                for (ci, c) in centers.iter().enumerate() {
                    let d = (v - c).powi(2);
                    if d < bd {
                        bd = d;
                        bi = ci;
                    }
                }
                if assignment[i] != bi {
                    assignment[i] = bi;
                    moved = true;
                }
            }
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for (i, v) in values.iter().enumerate() {
                sums[assignment[i]] += v;
                counts[assignment[i]] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c] / counts[c] as f64;
                }
            }
            if !moved {
                break;
            }
        }

        let within_ss: f64 = values
            .iter()
            .zip(&assignment)
            .map(|(v, &a)| (v - centers[a]).powi(2))
            .sum();
        if best.as_ref().map_or(true, |b| within_ss < b.within_ss) {
            best = Some(KmeansFit {
                centers,
                assignment,
                within_ss,
                between_share: 1.0 - within_ss / total_ss,
            });
        }
    }

    let mut fit = best.unwrap();
    // Sort centers ascending and remap assignments.
    let mut order: Vec<usize> = (0..fit.centers.len()).collect();
    order.sort_by(|&a, &b| fit.centers[a].partial_cmp(&fit.centers[b]).unwrap());
    let mut remap = vec![0usize; fit.centers.len()];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        remap[old_idx] = new_idx;
    }
    fit.centers = order.iter().map(|&i| fit.centers[i]).collect();
    // Drop duplicate centers (can arise when a cluster empties).
    fit.centers.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if fit.centers.len() < fit.centers.capacity() {
        // Reassign after dedup.
        for (i, _) in values.iter().enumerate() {
            fit.assignment[i] = crate::dp::nearest(&fit.centers, values[i]);
        }
    } else {
        for a in fit.assignment.iter_mut() {
            *a = remap[*a];
        }
    }
    Ok(fit)
}

/// Result of discretizing a panel: the state space, row-to-state assignment,
/// and any fallback warnings.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub space: StateSpace,
    /// State index per panel row, aligned with the input order.
    pub row_state: Vec<usize>,
    /// Action index per panel row (orders snapped to the y grid).
    pub row_action: Vec<usize>,
    pub warnings: Vec<String>,
    pub price_between_share: f64,
    pub lnq_between_share: f64,
}

/// Clusters price and ln(Q7 + 1) with two k-means each, snaps stock and
/// orders onto the fixed grids, and assigns every row to a state.
pub fn discretize(
    rows: &[PanelRow],
    k_grid: Vec<u32>,
    y_grid: Vec<u32>,
    n_clusters: usize,
    seed: u64,
) -> Result<Discretized> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty panel".into()));
    }
    let prices: Vec<f64> = rows.iter().map(|r| r.price).collect();
    let lnqs: Vec<f64> = rows.iter().map(|r| (r.trailing7 + 1.0).ln()).collect();

    let mut warnings = Vec::new();
    let price_fit = kmeans_1d(&prices, n_clusters, seed ^ 0x70)?;
    if price_fit.centers.len() < n_clusters {
        warnings.push("price has near-zero variance; single price cluster".into());
    }
    let lnq_fit = kmeans_1d(&lnqs, n_clusters, seed ^ 0x71)?;
    if lnq_fit.centers.len() < n_clusters {
        warnings.push("ln(Q7+1) has near-zero variance; single cluster".into());
    }

    let space = StateSpace {
        k_grid,
        y_grid,
        price_centers: price_fit.centers.clone(),
        lnq_centers: lnq_fit.centers.clone(),
    };

    let mut row_state = Vec::with_capacity(rows.len());
    let mut row_action = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let k_idx = crate::dp::snap_to_grid(&space.k_grid, r.inventory as f64);
        let s = space.index(
            k_idx,
            price_fit.assignment[i],
            lnq_fit.assignment[i],
            r.weekend,
            r.holiday,
        );
        row_state.push(s);
        row_action.push(space.snap_action(r.order as f64));
    }

    Ok(Discretized {
        space,
        row_state,
        row_action,
        warnings,
        price_between_share: price_fit.between_share,
        lnq_between_share: lnq_fit.between_share,
    })
}
