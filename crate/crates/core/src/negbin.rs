//! Negative Binomial demand primitives (NB2: mean `d_e`, variance
//! `d_e * (1 + alpha * d_e)`; `alpha = 0` is the Poisson limit).

use crate::error::{Error, Result};

/// Below this over-dispersion the pmf is computed as a Poisson.
const POISSON_ALPHA: f64 = 1e-12;

/// Tail mass left out of truncated supports.
const TAIL_EPS: f64 = 1e-12;

fn check_mean(d_e: f64) -> Result<()> {
    if !d_e.is_finite() || d_e <= 0.0 {
        return Err(Error::domain(format!(
            "expected demand must be finite and > 0, got {d_e}"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::domain(format!(
            "over-dispersion must be finite and >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// Largest support point kept in truncated sums: the smallest D with
/// cumulative mass >= 1 - 1e-12, capped at 10 * (d_e + 10).
pub fn truncation_cap(d_e: f64) -> usize {
    (10.0 * (d_e + 10.0)).ceil() as usize
}

/// pmf evaluated over {0, 1, ..., D} where D is the truncation point.
/// The returned vector sums to 1 within the tail tolerance.
pub fn pmf_truncated(d_e: f64, alpha: f64) -> Result<Vec<f64>> {
    check_mean(d_e)?;
    check_alpha(alpha)?;
    let cap = truncation_cap(d_e);
    let mut probs = Vec::with_capacity(cap.min(4096) + 1);
    let ratio = if alpha < POISSON_ALPHA {
        0.0
    } else {
        let r = 1.0 / alpha;
        d_e / (r + d_e)
    };
    let mut p = if alpha < POISSON_ALPHA {
        (-d_e).exp()
    } else {
        let r = 1.0 / alpha;
        (-r * (d_e / r).ln_1p()).exp()
    };
    let mut cum = p;
    probs.push(p);
    let mut d = 0usize;
    while cum < 1.0 - TAIL_EPS && d < cap {
        p = if alpha < POISSON_ALPHA {
            p * d_e / (d as f64 + 1.0)
        } else {
            let r = 1.0 / alpha;
            p * (r + d as f64) / (d as f64 + 1.0) * ratio
        };
        probs.push(p);
        cum += p;
        d += 1;
    }
    Ok(probs)
}

/// pmf at a single count.
pub fn pmf(d: u32, d_e: f64, alpha: f64) -> Result<f64> {
    Ok(ln_pmf(d, d_e, alpha)?.exp())
}

/// Log pmf, stable for all alpha >= 0 including the Poisson limit, computed
/// through exact gamma-ratio recurrences (no special functions).
pub fn ln_pmf(d: u32, d_e: f64, alpha: f64) -> Result<f64> {
    check_mean(d_e)?;
    check_alpha(alpha)?;
    let q = d as f64;
    if alpha < POISSON_ALPHA {
        let mut ln_fact = 0.0;
        for i in 1..=d {
            ln_fact += (i as f64).ln();
        }
        return Ok(q * d_e.ln() - d_e - ln_fact);
    }
    let r = 1.0 / alpha;
    // ln Gamma(q + r) - ln Gamma(r) - ln Gamma(q + 1) via products.
    let mut ln_comb = 0.0;
    for i in 0..d {
        ln_comb += (r + i as f64).ln() - (1.0 + i as f64).ln();
    }
    Ok(ln_comb - r * (d_e / r).ln_1p() + q * (d_e.ln() - (r + d_e).ln()))
}

/// Expected censored sales and stockout probability at stock level k:
/// (E[min(d, k)], P(d > k)).
pub fn expected_min_and_stockout(k: u32, d_e: f64, alpha: f64) -> Result<(f64, f64)> {
    let probs = pmf_truncated(d_e, alpha)?;
    let kf = k as f64;
    let mut e_min = 0.0;
    let mut p_le_k = 0.0;
    for (d, &p) in probs.iter().enumerate() {
        let df = d as f64;
        e_min += df.min(kf) * p;
        if df <= kf {
            p_le_k += p;
        }
    }
    // Mass beyond the truncation point sells at least min(k, D) units.
    let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    e_min += tail * kf.min(probs.len() as f64 - 1.0);
    let stockout = (1.0 - p_le_k).clamp(0.0, 1.0);
    Ok((e_min, stockout))
}

/// Draws one demand realization by inverting the truncated cdf.
pub fn sample(d_e: f64, alpha: f64, u: f64) -> Result<u32> {
    let probs = pmf_truncated(d_e, alpha)?;
    let mut cum = 0.0;
    for (d, &p) in probs.iter().enumerate() {
        cum += p;
        if u <= cum {
            return Ok(d as u32);
        }
    }
    Ok((probs.len() - 1) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: NB2 pmf through statrs' log-gamma.
    fn oracle_pmf(d: u32, mu: f64, alpha: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        if alpha == 0.0 {
            let q = d as f64;
            return (q * mu.ln() - mu - ln_gamma(q + 1.0)).exp();
        }
        let r = 1.0 / alpha;
        let q = d as f64;
        (ln_gamma(q + r) - ln_gamma(r) - ln_gamma(q + 1.0)
            + r * (r / (r + mu)).ln()
            + q * (mu / (r + mu)).ln())
        .exp()
    }

    #[test]
    fn poisson_limit_at_zero_alpha() {
        let p0 = pmf(0, 1.0, 0.0).unwrap();
        assert!((p0 - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn mean_and_variance_match_stated_formulas() {
        let probs = pmf_truncated(2.0, 0.5).unwrap();
        let mean: f64 = probs.iter().enumerate().map(|(d, p)| d as f64 * p).sum();
        let ex2: f64 = probs
            .iter()
            .enumerate()
            .map(|(d, p)| (d as f64).powi(2) * p)
            .sum();
        let var = ex2 - mean * mean;
        assert!((mean - 2.0).abs() < 1e-9, "mean {mean}");
        assert!((var - 4.0).abs() < 1e-8, "var {var}");
    }

    #[test]
    fn pmf_normalizes() {
        let total: f64 = pmf_truncated(3.7, 0.33).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn rejects_nonpositive_mean() {
        assert!(pmf(0, 0.0, 0.3).is_err());
        assert!(pmf(0, -1.0, 0.3).is_err());
        assert!(expected_min_and_stockout(3, 0.0, 0.3).is_err());
    }

    #[test]
    fn converges_to_poisson_as_alpha_vanishes() {
        for de10 in 1..=10 {
            let d_e = de10 as f64;
            let mut sup = 0.0f64;
            for d in 0..(truncation_cap(d_e) as u32) {
                let nb = pmf(d, d_e, 1e-8).unwrap();
                let po = pmf(d, d_e, 0.0).unwrap();
                sup = sup.max((nb - po).abs());
            }
            assert!(sup < 1e-6, "sup distance {sup} at d_e {d_e}");
        }
    }

    #[test]
    fn censored_mean_edges() {
        // k = 0: nothing sells, stockout whenever d > 0.
        let (e0, s0) = expected_min_and_stockout(0, 2.5, 0.3).unwrap();
        assert_eq!(e0, 0.0);
        let p_zero = pmf(0, 2.5, 0.3).unwrap();
        assert!((s0 - (1.0 - p_zero)).abs() < 1e-12);

        // Far in the tail the censoring binds with negligible probability.
        let d_e: f64 = 4.0;
        let alpha: f64 = 0.25;
        let sigma = (d_e * (1.0 + alpha * d_e)).sqrt();
        let k = (d_e + 60.0 * sigma).ceil() as u32;
        let (em, st) = expected_min_and_stockout(k, d_e, alpha).unwrap();
        assert!((em - d_e).abs() < 1e-8, "uncensored mean {em}");
        assert!(st < 1e-8);
    }

    #[test]
    fn censored_mean_matches_direct_summation_oracle() {
        let (e_min, stockout) = expected_min_and_stockout(5, 3.0, 0.2).unwrap();
        let mut e_ref = 0.0;
        let mut stock_ref = 0.0;
        for d in 0..2000u32 {
            let p = oracle_pmf(d, 3.0, 0.2);
            e_ref += (d.min(5)) as f64 * p;
            if d > 5 {
                stock_ref += p;
            }
        }
        assert!((e_min - e_ref).abs() < 1e-12, "{e_min} vs {e_ref}");
        assert!((stockout - stock_ref).abs() < 1e-12);
    }

    #[test]
    fn censored_mean_monotone_in_stock() {
        let mut prev = expected_min_and_stockout(0, 2.2, 0.4).unwrap();
        for k in 1..60u32 {
            let cur = expected_min_and_stockout(k, 2.2, 0.4).unwrap();
            assert!(cur.0 >= prev.0 - 1e-14);
            assert!(cur.1 <= prev.1 + 1e-14);
            prev = cur;
        }
    }

    #[test]
    fn ln_pmf_agrees_with_oracle() {
        for &(mu, alpha) in &[(0.7, 0.0), (2.5, 0.33), (9.0, 1.1), (1.3, 0.05)] {
            for d in 0..40u32 {
                let mine = pmf(d, mu, alpha).unwrap();
                let theirs = oracle_pmf(d, mu, alpha);
                assert!(
                    (mine - theirs).abs() < 1e-12 * (1.0 + theirs),
                    "d={d} mu={mu} alpha={alpha}: {mine} vs {theirs}"
                );
            }
        }
    }

    #[test]
    fn sampling_inverts_the_cdf() {
        // u below pmf(0) maps to 0; u = 1 maps into the far tail.
        let p0 = pmf(0, 2.0, 0.3).unwrap();
        assert_eq!(sample(2.0, 0.3, p0 * 0.5).unwrap(), 0);
        assert!(sample(2.0, 0.3, 1.0).unwrap() > 10);
    }
}
