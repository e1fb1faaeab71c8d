//! Two-step pseudo-maximum-likelihood estimation of the perceived-cost
//! vector gamma = (1/sigma_eps, gamma_h/sigma_eps, gamma_z/sigma_eps,
//! gamma_f/sigma_eps, gamma_c/sigma_eps).
//!
//! Step one estimates choice probabilities with a kernel smoother over the
//! discretized state space. Step two maximizes the pseudo-likelihood built
//! from the policy-iteration mapping psi = lambda(upsilon(P)): the valuation
//! of the kernel CCPs is linear in gamma, so V(gamma) = W gamma + w0 is
//! precomputed with one factorization and the second step reduces to a
//! five-parameter logit with action covariates Z(y) = H(y) + beta F(y) W and
//! offsets beta F(y) w0. The gamma-gradient through the valuation is exact,
//! not approximated, because V is evaluated at fixed P.

use nalgebra::{DMatrix, DVector};

use crate::dp::solve::EULER_GAMMA;
use crate::dp::{CcpTable, DiscreteModel, StateSpace};
use crate::error::{Error, Result};
use crate::optim::{newton_maximize, OptimOptions};
use crate::types::PanelRow;

/// Probability floor applied to kernel CCPs before the valuation.
pub const CCP_FLOOR: f64 = 1e-6;

/// Coordinate sharpness of the kernel: grid steps are scaled to this many
/// distance units, so own-cell observations dominate wherever the cell is
/// visited and the kernel's everywhere-positive weights only matter as a
/// nearest-neighbour fill for empty cells.
pub const KERNEL_SHARPNESS: f64 = 50.0;

/// First-stage kernel estimate of P(y|x) on every grid state:
/// P(y|x) = sum_t 1{y_t = y} K_T(x_t - x) / sum_t K_T(x_t - x) with
/// K_T(u) = 1 / (1 + sqrt(T) ||u||) on standardized coordinates.
pub fn kernel_ccp(rows: &[PanelRow], space: &StateSpace, row_actions: &[usize]) -> CcpTable {
    kernel_ccp_pooled(rows, space, row_actions, 1.0)
}

/// Kernel CCPs with a widened pooling window along the stock grid
/// (`k_pool` grid steps count as one distance unit).
pub fn kernel_ccp_pooled(
    rows: &[PanelRow],
    space: &StateSpace,
    row_actions: &[usize],
    k_pool: f64,
) -> CcpTable {
    let t = rows.len();
    let n = space.n_states();
    let ny = space.n_actions();
    let sqrt_t = (t as f64).sqrt();

    // Row coordinates: (k, price, ln(Q7+1), weekend, holiday).
    let coords: Vec<[f64; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.inventory as f64,
                r.price,
                (r.trailing7 + 1.0).ln(),
                r.weekend as u8 as f64,
                r.holiday as u8 as f64,
            ]
        })
        .collect();

    // Standardize each coordinate by its grid resolution, so that adjacent
    // grid states sit one unit apart and the kernel concentrates on the own
    // cell as T grows (empty cells still borrow from neighbours through the
    // everywhere-positive weights).
    let gap = |centers: &[f64]| -> f64 {
        let mut g = f64::INFINITY;
        for w in centers.windows(2) {
            g = g.min((w[1] - w[0]).abs());
        }
        if g.is_finite() && g > 1e-9 {
            g
        } else {
            1.0
        }
    };
    let k_step = if space.k_grid.len() > 1 {
        (space.k_grid[1] - space.k_grid[0]) as f64
    } else {
        1.0
    };
    let k_scale = k_step * k_pool / KERNEL_SHARPNESS;
    let scale = [
        k_scale,
        gap(&space.price_centers) / KERNEL_SHARPNESS,
        gap(&space.lnq_centers) / KERNEL_SHARPNESS,
        1.0 / KERNEL_SHARPNESS,
        1.0 / KERNEL_SHARPNESS,
    ];

    let mut p = DMatrix::<f64>::zeros(n, ny);
    for x in 0..n {
        let cx = space.coordinates(x);
        let mut denom = 0.0;
        let mut numer = vec![0.0f64; ny];
        for (i, ci) in coords.iter().enumerate() {
            let mut d2 = 0.0;
            for j in 0..5 {
                let u = (ci[j] - cx[j]) / scale[j];
                d2 += u * u;
            }
            let w = 1.0 / (1.0 + sqrt_t * d2.sqrt());
            denom += w;
            numer[row_actions[i]] += w;
        }
        for y in 0..ny {
            p[(x, y)] = numer[y] / denom;
        }
    }

    // Floor and renormalize.
    for x in 0..n {
        let mut s = 0.0;
        for y in 0..ny {
            p[(x, y)] = p[(x, y)].max(CCP_FLOOR);
            s += p[(x, y)];
        }
        for y in 0..ny {
            p[(x, y)] /= s;
        }
    }
    p
}

/// Kernel CCPs for a sample that lives exactly on grid states: the
/// observation coordinates are the states' own coordinate vectors.
pub fn kernel_ccp_states(
    space: &StateSpace,
    row_states: &[usize],
    row_actions: &[usize],
) -> CcpTable {
    let t = row_states.len();
    let n = space.n_states();
    let ny = space.n_actions();
    let sqrt_t = (t as f64).sqrt();

    let gap = |centers: &[f64]| -> f64 {
        let mut g = f64::INFINITY;
        for w in centers.windows(2) {
            g = g.min((w[1] - w[0]).abs());
        }
        if g.is_finite() && g > 1e-9 {
            g
        } else {
            1.0
        }
    };
    let k_step = if space.k_grid.len() > 1 {
        (space.k_grid[1] - space.k_grid[0]) as f64
    } else {
        1.0
    };
    let scale = [
        k_step / KERNEL_SHARPNESS,
        gap(&space.price_centers) / KERNEL_SHARPNESS,
        gap(&space.lnq_centers) / KERNEL_SHARPNESS,
        1.0 / KERNEL_SHARPNESS,
        1.0 / KERNEL_SHARPNESS,
    ];

    // Aggregate observations per state first; distances depend only on the
    // (state, state) pair.
    let mut per_state = vec![vec![0.0f64; ny]; n];
    for (&x, &y) in row_states.iter().zip(row_actions.iter()) {
        per_state[x][y] += 1.0;
    }
    let coords: Vec<[f64; 5]> = (0..n).map(|x| space.coordinates(x)).collect();

    let mut p = DMatrix::<f64>::zeros(n, ny);
    for x in 0..n {
        let mut denom = 0.0;
        let mut numer = vec![0.0f64; ny];
        for x2 in 0..n {
            let tot: f64 = per_state[x2].iter().sum();
            if tot == 0.0 {
                continue;
            }
            let mut d2 = 0.0;
            for j in 0..5 {
                let u = (coords[x2][j] - coords[x][j]) / scale[j];
                d2 += u * u;
            }
            let w = 1.0 / (1.0 + sqrt_t * d2.sqrt());
            denom += w * tot;
            for y in 0..ny {
                numer[y] += w * per_state[x2][y];
            }
        }
        for y in 0..ny {
            p[(x, y)] = if denom > 0.0 { numer[y] / denom } else { 1.0 / ny as f64 };
        }
    }
    for x in 0..n {
        let mut s = 0.0;
        for y in 0..ny {
            p[(x, y)] = p[(x, y)].max(CCP_FLOOR);
            s += p[(x, y)];
        }
        for y in 0..ny {
            p[(x, y)] /= s;
        }
    }
    p
}

/// Precomputed pseudo-likelihood machinery for one (model, P-hat, sample).
pub struct PseudoLik {
    /// Per action: Z(y) = H(y) + beta F(y) W, |X| x 5.
    z: Vec<DMatrix<f64>>,
    /// Per action: offset beta F(y) w0.
    c: Vec<DVector<f64>>,
    /// Observation counts per (state, action); fractional weights allowed.
    counts: DMatrix<f64>,
    pub n_obs: f64,
    pub beta: f64,
}

impl PseudoLik {
    /// Builds the machinery: one LU factorization of I - beta sum P*F and
    /// six solves (five W columns plus w0).
    pub fn new(
        model: &DiscreteModel,
        p_hat: &CcpTable,
        beta: f64,
        counts: DMatrix<f64>,
    ) -> Result<Self> {
        let n = model.n_states();
        let ny = model.n_actions();
        if p_hat.nrows() != n || p_hat.ncols() != ny {
            return Err(Error::domain("CCP table shape mismatch"));
        }
        if counts.nrows() != n || counts.ncols() != ny {
            return Err(Error::domain("count matrix shape mismatch"));
        }
        if p_hat.iter().any(|&v| v <= 0.0) {
            return Err(Error::domain("kernel CCPs must be strictly positive"));
        }

        let mut a = DMatrix::<f64>::identity(n, n);
        let mut rhs = DMatrix::<f64>::zeros(n, 6); // W columns 0..5, w0 at 5
        for y in 0..ny {
            let f = &model.f_mats[y];
            let h = &model.h_mats[y];
            for x in 0..n {
                let pxy = p_hat[(x, y)];
                for j in 0..5 {
                    rhs[(x, j)] += pxy * h[(x, j)];
                }
                rhs[(x, 5)] += pxy * (EULER_GAMMA - pxy.ln());
                if beta != 0.0 {
                    for cidx in 0..n {
                        a[(x, cidx)] -= beta * pxy * f[(x, cidx)];
                    }
                }
            }
        }
        let lu = a.lu();
        let solved = lu
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("I - beta sum P*F".into()))?;
        let w = solved.view((0, 0), (n, 5)).into_owned();
        let w0 = solved.column(5).into_owned();

        let mut z = Vec::with_capacity(ny);
        let mut c = Vec::with_capacity(ny);
        for y in 0..ny {
            let fz = &model.f_mats[y] * &w;
            z.push(&model.h_mats[y] + fz * beta);
            c.push(&model.f_mats[y] * &w0 * beta);
        }

        let n_obs = counts.iter().sum();
        Ok(PseudoLik {
            z,
            c,
            counts,
            n_obs,
            beta,
        })
    }

    /// Observation counts from row-level state and action assignments.
    pub fn count_matrix(
        space: &StateSpace,
        row_states: &[usize],
        row_actions: &[usize],
    ) -> DMatrix<f64> {
        let mut counts = DMatrix::<f64>::zeros(space.n_states(), space.n_actions());
        for (&x, &y) in row_states.iter().zip(row_actions.iter()) {
            counts[(x, y)] += 1.0;
        }
        counts
    }

    fn action_utilities(&self, gamma: &DVector<f64>) -> DMatrix<f64> {
        let n = self.z[0].nrows();
        let ny = self.z.len();
        let mut u = DMatrix::<f64>::zeros(n, ny);
        for y in 0..ny {
            let col = &self.z[y] * gamma + &self.c[y];
            for x in 0..n {
                u[(x, y)] = col[x];
            }
        }
        u
    }

    /// psi(y|x; P, gamma): the policy-improvement probabilities at the
    /// valuation of P.
    pub fn ccp(&self, gamma: &DVector<f64>) -> CcpTable {
        let u = self.action_utilities(gamma);
        let (n, ny) = u.shape();
        let mut p = DMatrix::<f64>::zeros(n, ny);
        for x in 0..n {
            let m = u.row(x).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for y in 0..ny {
                let e = (u[(x, y)] - m).exp();
                p[(x, y)] = e;
                s += e;
            }
            for y in 0..ny {
                p[(x, y)] /= s;
            }
        }
        p
    }

    /// Pseudo log-likelihood Q(P, gamma) = sum_t ln psi(y_t, x_t; P, gamma).
    pub fn value(&self, gamma: &DVector<f64>) -> f64 {
        self.value_grad_impl(gamma, false).0
    }

    /// Q and its analytic gamma-gradient.
    pub fn value_grad(&self, gamma: &DVector<f64>) -> (f64, DVector<f64>) {
        let (q, g, _) = self.value_grad_impl(gamma, true);
        (q, g.unwrap())
    }

    fn value_grad_impl(
        &self,
        gamma: &DVector<f64>,
        with_grad: bool,
    ) -> (f64, Option<DVector<f64>>, ()) {
        let u = self.action_utilities(gamma);
        let (n, ny) = u.shape();
        let mut q = 0.0;
        let mut grad = DVector::<f64>::zeros(5);
        for x in 0..n {
            let row_total: f64 = (0..ny).map(|y| self.counts[(x, y)]).sum();
            if row_total == 0.0 {
                continue;
            }
            let m = u.row(x).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let mut probs = vec![0.0f64; ny];
            for y in 0..ny {
                let e = (u[(x, y)] - m).exp();
                probs[y] = e;
                s += e;
            }
            let lse = m + s.ln();
            for p in probs.iter_mut() {
                *p /= s;
            }
            let mut zbar = [0.0f64; 5];
            if with_grad {
                for y in 0..ny {
                    for j in 0..5 {
                        zbar[j] += probs[y] * self.z[y][(x, j)];
                    }
                }
            }
            for y in 0..ny {
                let cnt = self.counts[(x, y)];
                if cnt > 0.0 {
                    q += cnt * (u[(x, y)] - lse);
                    if with_grad {
                        for j in 0..5 {
                            grad[j] += cnt * (self.z[y][(x, j)] - zbar[j]);
                        }
                    }
                }
            }
        }
        (q, if with_grad { Some(grad) } else { None }, ())
    }

    /// Analytic Hessian of Q: minus the count-weighted within-state
    /// covariance of the action covariates under psi. Q is concave in gamma.
    pub fn hessian(&self, gamma: &DVector<f64>) -> DMatrix<f64> {
        let u = self.action_utilities(gamma);
        let (n, ny) = u.shape();
        let mut h = DMatrix::<f64>::zeros(5, 5);
        for x in 0..n {
            let n_x: f64 = (0..ny).map(|y| self.counts[(x, y)]).sum();
            if n_x == 0.0 {
                continue;
            }
            let m = u.row(x).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let mut probs = vec![0.0f64; ny];
            for y in 0..ny {
                let e = (u[(x, y)] - m).exp();
                probs[y] = e;
                s += e;
            }
            for p in probs.iter_mut() {
                *p /= s;
            }
            let mut zbar = [0.0f64; 5];
            for y in 0..ny {
                for j in 0..5 {
                    zbar[j] += probs[y] * self.z[y][(x, j)];
                }
            }
            for y in 0..ny {
                let p = probs[y];
                if p == 0.0 {
                    continue;
                }
                let mut d = [0.0f64; 5];
                for j in 0..5 {
                    d[j] = self.z[y][(x, j)] - zbar[j];
                }
                for a in 0..5 {
                    for b in 0..5 {
                        h[(a, b)] -= n_x * p * d[a] * d[b];
                    }
                }
            }
        }
        h
    }

    /// Outer product of per-observation scores, summed over the sample.
    pub fn score_outer_product(&self, gamma: &DVector<f64>) -> DMatrix<f64> {
        let u = self.action_utilities(gamma);
        let (n, ny) = u.shape();
        let mut opg = DMatrix::<f64>::zeros(5, 5);
        for x in 0..n {
            let row_total: f64 = (0..ny).map(|y| self.counts[(x, y)]).sum();
            if row_total == 0.0 {
                continue;
            }
            let m = u.row(x).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let mut probs = vec![0.0f64; ny];
            for y in 0..ny {
                let e = (u[(x, y)] - m).exp();
                probs[y] = e;
                s += e;
            }
            for p in probs.iter_mut() {
                *p /= s;
            }
            let mut zbar = [0.0f64; 5];
            for y in 0..ny {
                for j in 0..5 {
                    zbar[j] += probs[y] * self.z[y][(x, j)];
                }
            }
            for y in 0..ny {
                let cnt = self.counts[(x, y)];
                if cnt > 0.0 {
                    let mut sc = [0.0f64; 5];
                    for j in 0..5 {
                        sc[j] = self.z[y][(x, j)] - zbar[j];
                    }
                    for a in 0..5 {
                        for b in 0..5 {
                            opg[(a, b)] += cnt * sc[a] * sc[b];
                        }
                    }
                }
            }
        }
        opg
    }

    /// Adds a constant to every action's utility offset (test hook for the
    /// softmax shift-invariance property).
    #[cfg(test)]
    pub fn shift_offsets(&mut self, delta: f64) {
        let n = self.z[0].nrows();
        for c in self.c.iter_mut() {
            *c += DVector::from_element(n, delta);
        }
    }
}

/// Second-step estimate with both parameterizations and diagnostics.
#[derive(Debug, Clone)]
pub struct StructuralFit {
    /// (1/sigma_eps, gamma_h/s, gamma_z/s, gamma_f/s, gamma_c/s).
    pub gamma_tilde: [f64; 5],
    pub se_tilde: [f64; 5],
    /// Dollar costs (gamma_h, gamma_z, gamma_f, gamma_c).
    pub dollars: [f64; 4],
    /// Delta-method standard errors for the dollar costs.
    pub se_dollars: [f64; 4],
    pub pseudo_loglik: f64,
    pub n_obs: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// |Q| change per observation when the CCP floor moves to 1e-5.
    pub floor_sensitivity: f64,
    /// False when the estimated 1/sigma_eps is non-positive, i.e. the money
    /// scale is unidentified in this sample; the dollar transformation is
    /// then meaningless and its delta-method errors blow up accordingly.
    pub scale_identified: bool,
}

impl StructuralFit {
    pub fn t_stats(&self) -> [f64; 4] {
        let mut out = [0.0f64; 4];
        for j in 0..4 {
            out[j] = self.dollars[j] / self.se_dollars[j];
        }
        out
    }
}

/// Maximizes Q(P-hat, gamma) over the five-vector. The action utilities are
/// linear in gamma, so Q is globally concave and unconstrained Newton with
/// the analytic Hessian finds the unique maximum. When the money scale is
/// weakly identified the first element can cross zero; that surfaces as
/// `scale_identified = false` with correspondingly large delta-method
/// standard errors rather than a failure.
pub fn two_step_pml(lik: &PseudoLik) -> Result<StructuralFit> {
    // A sample with no order variation cannot identify the cost vector.
    let total: f64 = lik.counts.iter().sum();
    let no_order: f64 = (0..lik.counts.nrows()).map(|x| lik.counts[(x, 0)]).sum();
    if total == 0.0 || no_order == total || no_order == 0.0 {
        return Err(Error::InsufficientData(
            "order choices show no variation across the sample".into(),
        ));
    }

    let eval = |gamma: &DVector<f64>| -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let (q, g) = lik.value_grad(gamma);
        if !q.is_finite() {
            return None;
        }
        Some((q, g, lik.hessian(gamma)))
    };

    let gamma0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let opts = OptimOptions {
        max_iter: 300,
        grad_tol: 1e-9,
    };
    let res = newton_maximize(eval, gamma0, &opts)?;
    if !res.converged {
        return Err(Error::NoConvergence {
            iterations: res.iterations,
            residual: res.grad_norm,
            context: "two-step pseudo likelihood".into(),
        });
    }
    let gamma = res.x.clone();

    // Score-based standard errors; flat directions surface as large SEs.
    let opg = lik.score_outer_product(&gamma);
    let vcov = invert_or_pinv(&opg);
    let mut se_tilde = [0.0f64; 5];
    for (j, se) in se_tilde.iter_mut().enumerate() {
        *se = vcov[(j, j)].max(0.0).sqrt();
    }

    // Dollar costs: divide elements 2..5 by the first element; delta method.
    let g1 = gamma[0];
    let mut dollars = [0.0f64; 4];
    let mut jac = DMatrix::<f64>::zeros(4, 5);
    for j in 0..4 {
        dollars[j] = gamma[j + 1] / g1;
        jac[(j, 0)] = -gamma[j + 1] / (g1 * g1);
        jac[(j, j + 1)] = 1.0 / g1;
    }
    let vd = &jac * &vcov * jac.transpose();
    let mut se_dollars = [0.0f64; 4];
    for (j, se) in se_dollars.iter_mut().enumerate() {
        *se = vd[(j, j)].max(0.0).sqrt();
    }

    Ok(StructuralFit {
        gamma_tilde: [gamma[0], gamma[1], gamma[2], gamma[3], gamma[4]],
        se_tilde,
        dollars,
        se_dollars,
        pseudo_loglik: res.value,
        n_obs: lik.n_obs,
        grad_norm: res.grad_norm,
        iterations: res.iterations,
        floor_sensitivity: f64::NAN,
        scale_identified: gamma[0] > 0.0,
    })
}

fn invert_or_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.inverse();
    }
    // Flat directions: eigen-decompose and invert the informative part.
    let eig = m.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_ev * 1e-12;
    let mut inv = DMatrix::<f64>::zeros(m.nrows(), m.ncols());
    for i in 0..eig.eigenvalues.len() {
        let ev = eig.eigenvalues[i];
        let w = if ev > tol { 1.0 / ev } else { 1e12 };
        let v = eig.eigenvectors.column(i);
        inv += v * v.transpose() * w;
    }
    inv
}


pub mod pipeline;
