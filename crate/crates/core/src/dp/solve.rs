//! Integrated Bellman solver and the policy-improvement / valuation pair.
//!
//! Values follow the log-sum-exp convention: V = ln sum_y exp(h'gamma + beta
//! F V). The valuation mapping carries the Euler constant, so its fixed point
//! sits exactly euler / (1 - beta) above the log-sum-exp value; choice
//! probabilities are invariant to that offset and the solver removes it when
//! it uses valuation steps internally.

use nalgebra::{DMatrix, DVector};

use crate::dp::{CcpTable, DiscreteModel, ValueVector};
use crate::error::{Error, Result};
use crate::types::StructuralParams;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Sup-norm tolerance on the Bellman residual.
    pub tol: f64,
    /// Sweep budget for pure successive approximation.
    pub max_sweeps: usize,
    /// Interleave valuation (policy-iteration) steps with the sweeps. At the
    /// daily discount factor pure successive approximation needs ~2e5 sweeps
    /// to reach 1e-10, so acceleration stays on outside of diagnostics.
    pub accelerate: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_sweeps: 100_000,
            accelerate: true,
        }
    }
}

/// Flow utilities per action in sigma_eps units: u_y = H(y) * gamma.
pub fn flow_utilities(model: &DiscreteModel, params: &StructuralParams) -> Vec<DVector<f64>> {
    let w = params.weight_vector();
    let wv = DVector::from_row_slice(&w);
    model.h_mats.iter().map(|h| h * &wv).collect()
}

/// Action-value matrix: column y holds u_y + beta * F(y) * v.
pub fn action_values(
    model: &DiscreteModel,
    utilities: &[DVector<f64>],
    beta: f64,
    v: &ValueVector,
) -> DMatrix<f64> {
    let n = model.n_states();
    let ny = model.n_actions();
    let mut av = DMatrix::<f64>::zeros(n, ny);
    for y in 0..ny {
        let cont = &model.f_mats[y] * v;
        for x in 0..n {
            av[(x, y)] = utilities[y][x] + beta * cont[x];
        }
    }
    av
}

/// One application of the integrated Bellman operator (row-wise log-sum-exp
/// with max subtraction).
pub fn bellman_apply(
    model: &DiscreteModel,
    utilities: &[DVector<f64>],
    beta: f64,
    v: &ValueVector,
) -> ValueVector {
    let av = action_values(model, utilities, beta, v);
    lse_rows(&av)
}

fn lse_rows(av: &DMatrix<f64>) -> DVector<f64> {
    let n = av.nrows();
    let mut out = DVector::<f64>::zeros(n);
    for x in 0..n {
        let row = av.row(x);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|a| (a - m).exp()).sum();
        out[x] = m + s.ln();
    }
    out
}

fn floor_rows(p: &mut DMatrix<f64>, floor: f64) {
    let (n, ny) = p.shape();
    for x in 0..n {
        let mut s = 0.0;
        for y in 0..ny {
            if p[(x, y)] < floor {
                p[(x, y)] = floor;
            }
            s += p[(x, y)];
        }
        for y in 0..ny {
            p[(x, y)] /= s;
        }
    }
}

fn softmax_rows(av: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, ny) = av.shape();
    let mut p = DMatrix::<f64>::zeros(n, ny);
    for x in 0..n {
        let row = av.row(x);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for y in 0..ny {
            let e = (av[(x, y)] - m).exp();
            p[(x, y)] = e;
            s += e;
        }
        for y in 0..ny {
            p[(x, y)] /= s;
        }
    }
    p
}

/// Solves the integrated Bellman equation by successive approximation with
/// optional valuation acceleration; converged when the sup-norm residual
/// falls below `opts.tol` (relative to the value scale).
pub fn solve_bellman(
    model: &DiscreteModel,
    params: &StructuralParams,
    opts: &SolveOptions,
) -> Result<ValueVector> {
    solve_bellman_from(model, params, opts, None)
}

/// Same as `solve_bellman` with a warm-start value (ladder sweeps reuse the
/// neighbouring solution).
pub fn solve_bellman_from(
    model: &DiscreteModel,
    params: &StructuralParams,
    opts: &SolveOptions,
    start: Option<&ValueVector>,
) -> Result<ValueVector> {
    params.validate()?;
    let n = model.n_states();
    let beta = params.beta;
    let utilities = flow_utilities(model, params);
    let mut v = start.cloned().unwrap_or_else(|| DVector::zeros(n));
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::domain("non-finite warm-start value"));
    }

    let offset = EULER_GAMMA / (1.0 - beta);
    let mut residual = f64::INFINITY;
    let budget = if opts.accelerate { 400 } else { opts.max_sweeps };

    for _ in 0..budget {
        let tv = bellman_apply(model, &utilities, beta, &v);
        // Values scale like flow/(1-beta); below ~10 ulps the residual is
        // rounding noise, not approximation error.
        let scale = 1.0 + tv.amax();
        residual = (&tv - &v).amax();
        if residual < opts.tol.max(12.0 * f64::EPSILON * scale) {
            return Ok(tv);
        }
        if opts.accelerate {
            // Newton step on the smoothed Bellman operator: evaluate the
            // softmax policy exactly, then return to the log-sum-exp scale.
            // Probabilities that underflow to zero (action values hundreds of
            // sigma apart) are floored so the policy evaluation stays
            // solvable; the candidate only replaces the sweep if it lowers
            // the true Bellman residual.
            let av = action_values(model, &utilities, beta, &tv);
            let mut p = softmax_rows(&av);
            floor_rows(&mut p, 1e-30);
            match valuation_inner(model, &utilities, beta, &p) {
                Ok(v_eval) => {
                    let candidate = v_eval.add_scalar(-offset);
                    let cand_res = (&bellman_apply(model, &utilities, beta, &candidate)
                        - &candidate)
                        .amax();
                    if cand_res.is_finite() && cand_res < residual {
                        v = candidate;
                    } else {
                        v = tv;
                    }
                }
                Err(_) => v = tv,
            }
        } else {
            v = tv;
        }
    }

    Err(Error::NoConvergence {
        iterations: budget,
        residual,
        context: "integrated Bellman solve".into(),
    })
}

/// Policy improvement: logit choice probabilities implied by a value vector.
pub fn ccp_from_values(
    model: &DiscreteModel,
    params: &StructuralParams,
    v: &ValueVector,
) -> CcpTable {
    let utilities = flow_utilities(model, params);
    let av = action_values(model, &utilities, params.beta, v);
    softmax_rows(&av)
}

/// Valuation mapping: the value of behaving according to `p`,
/// V = [I - beta sum_y P(y) * F(y)]^{-1} [sum_y P(y) * (H(y) gamma + euler - ln P(y))].
pub fn valuation(
    model: &DiscreteModel,
    params: &StructuralParams,
    p: &CcpTable,
) -> Result<ValueVector> {
    params.validate()?;
    let utilities = flow_utilities(model, params);
    valuation_inner(model, &utilities, params.beta, p)
}

fn valuation_inner(
    model: &DiscreteModel,
    utilities: &[DVector<f64>],
    beta: f64,
    p: &CcpTable,
) -> Result<ValueVector> {
    let n = model.n_states();
    let ny = model.n_actions();
    if p.nrows() != n || p.ncols() != ny {
        return Err(Error::domain("CCP table shape mismatch"));
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for y in 0..ny {
        let f = &model.f_mats[y];
        for x in 0..n {
            let pxy = p[(x, y)];
            if pxy <= 0.0 {
                return Err(Error::domain(
                    "valuation requires strictly positive choice probabilities",
                ));
            }
            b[x] += pxy * (utilities[y][x] + EULER_GAMMA - pxy.ln());
            if beta != 0.0 {
                for c in 0..n {
                    a[(x, c)] -= beta * pxy * f[(x, c)];
                }
            }
        }
    }
    if beta == 0.0 {
        return Ok(b);
    }
    let lu = a.lu();
    lu.solve(&b)
        .ok_or_else(|| Error::SingularSystem("I - beta sum P*F".into()))
}

/// Induced state kernel M(x'|x) = sum_y P(y|x) F(y)(x'|x).
pub fn induced_kernel(model: &DiscreteModel, p: &CcpTable) -> DMatrix<f64> {
    let n = model.n_states();
    let ny = model.n_actions();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for y in 0..ny {
        let f = &model.f_mats[y];
        for x in 0..n {
            let pxy = p[(x, y)];
            if pxy == 0.0 {
                continue;
            }
            for c in 0..n {
                m[(x, c)] += pxy * f[(x, c)];
            }
        }
    }
    m
}

/// Stationary distribution of the chain induced by a CCP table.
pub fn ergodic_distribution(model: &DiscreteModel, p: &CcpTable) -> Result<DVector<f64>> {
    ergodic_from_kernel(&induced_kernel(model, p))
}

/// Stationary distribution by damped power iteration from a uniform start.
/// On a reducible chain this settles on the stationary mixture of the
/// recurrent classes reached from the uniform start.
pub fn ergodic_from_kernel(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(Error::domain("kernel must be square and non-empty"));
    }
    let tol = 1e-12;
    let mut pi = DVector::<f64>::from_element(n, 1.0 / n as f64);
    let mut converged = false;
    for _ in 0..400_000 {
        // Lazy step kills periodicity without moving the fixed point.
        let next = 0.5 * (m.transpose() * &pi) + 0.5 * &pi;
        let delta = (&next - &pi).amax();
        pi = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi /= total;
    let residual = (m.transpose() * &pi - &pi).amax();
    if !converged && residual > 1e-9 {
        return Err(Error::NoConvergence {
            iterations: 400_000,
            residual,
            context: "ergodic power iteration".into(),
        });
    }
    Ok(pi)
}
