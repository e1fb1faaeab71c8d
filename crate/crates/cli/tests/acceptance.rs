//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use invdp_core::counterfactual::outcomes::outcome_stats;
use invdp_core::counterfactual::{centralization_experiment, shutdown_suite};
use invdp_core::demand::fit_negbin;
use invdp_core::dp::solve::{
    ccp_from_values, ergodic_distribution, ergodic_from_kernel, solve_bellman, solve_bellman_from,
    valuation, SolveOptions, EULER_GAMMA,
};
use invdp_core::dp::{DiscreteModel, ValueVector};
use invdp_core::rng::{gumbel, normal, stream_rng};
use invdp_core::sim::chain::{synthesize_chain, ChainSpec};
use invdp_core::sim::{
    estimation_sample, simulate_panel_with_model, AgentModel, PriceProcess, SimSettings,
};
use invdp_core::ss_rules;
use invdp_core::stats;
use invdp_core::structural::pipeline::{fit_structural_panel, PipelineOptions};
use invdp_core::types::{default_daily_beta, DemandParams, MarkupClass, StructuralParams};

fn verdict(name: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("ACCEPTANCE {name}: PASS");
    } else {
        println!("ACCEPTANCE {name}: FAIL — {}", failures.join("; "));
    }
}

fn random_toy(n: usize, ny: usize, seed: u64, scale: f64) -> DiscreteModel {
    let mut rng = stream_rng(seed, 0, 0, 0xacce);
    let mut f_mats = Vec::with_capacity(ny);
    let mut h_mats = Vec::with_capacity(ny);
    for _ in 0..ny {
        let mut f = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            for (c, v) in row.drain(..).enumerate() {
                f[(x, c)] = v / s;
            }
        }
        let mut h = DMatrix::<f64>::zeros(n, 5);
        for x in 0..n {
            h[(x, 0)] = scale * (rng.gen::<f64>() - 0.5);
        }
        f_mats.push(f);
        h_mats.push(h);
    }
    DiscreteModel::raw(f_mats, h_mats).unwrap()
}

fn zero_params(beta: f64) -> StructuralParams {
    StructuralParams::new(0.0, 0.0, 0.0, 0.0, 1.0, beta).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: DP fixed-point suite.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_1_dp_fixed_point() {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    // Zero payoffs: V = ln|Y| / (1 - beta) at the daily discount factor.
    let beta = default_daily_beta();
    let model = {
        let n = 6;
        let ny = 9;
        let f = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
        let h = DMatrix::<f64>::zeros(n, 5);
        DiscreteModel::raw(vec![f; ny], vec![h; ny]).unwrap()
    };
    let v = solve_bellman(&model, &zero_params(beta), &SolveOptions::default()).unwrap();
    let expect = (9.0f64).ln() / (1.0 - beta);
    let err = (0..model.n_states())
        .map(|x| (v[x] - expect).abs())
        .fold(0.0f64, f64::max);
    if err > 1e-10 {
        failures.push(format!("zero-payoff value error {err:.3e} > 1e-10"));
    }

    // Brute-force oracle agreement on random 3-state / 2-action instances.
    for seed in 0..5u64 {
        let toy = random_toy(3, 2, 300 + seed, 1.5);
        let params = zero_params(0.9);
        let v = solve_bellman(&toy, &params, &SolveOptions::default()).unwrap();
        let utilities = invdp_core::dp::solve::flow_utilities(&toy, &params);
        let mut w = vec![0.0f64; 3];
        for _ in 0..2500 {
            let mut next = vec![0.0f64; 3];
            for x in 0..3 {
                let mut acc = 0.0;
                for y in 0..2 {
                    let mut cont = 0.0;
                    for c in 0..3 {
                        cont += toy.f_mats[y][(x, c)] * w[c];
                    }
                    acc += (utilities[y][x] + 0.9 * cont).exp();
                }
                next[x] = acc.ln();
            }
            w = next;
        }
        let diff = (0..3).map(|x| (v[x] - w[x]).abs()).fold(0.0f64, f64::max);
        if diff > 1e-8 {
            failures.push(format!("brute-force oracle diff {diff:.3e} > 1e-8 (seed {seed})"));
        }
    }

    // psi = lambda(upsilon) fixed point at the solved CCPs.
    let toy = random_toy(5, 4, 42, 1.0);
    let params = zero_params(0.9);
    let v = solve_bellman(&toy, &params, &SolveOptions::default()).unwrap();
    let p = ccp_from_values(&toy, &params, &v);
    let v_eval = valuation(&toy, &params, &p).unwrap();
    let p_next = ccp_from_values(&toy, &params, &v_eval);
    let psi_res = (&p_next - &p).amax();
    if psi_res > 1e-8 {
        failures.push(format!("psi fixed-point residual {psi_res:.3e} > 1e-8"));
    }
    // Euler-offset consistency between the two value conventions.
    let off_err = ((&v_eval - &v).add_scalar(-EULER_GAMMA / (1.0 - 0.9))).amax();
    if off_err > 1e-8 {
        failures.push(format!("valuation offset error {off_err:.3e}"));
    }

    // Ergodic residual on random kernels.
    let mut rng = stream_rng(77, 0, 0, 1);
    for _ in 0..5 {
        let n = 7;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.02).collect();
            let s: f64 = row.iter().sum();
            for (c, vv) in row.drain(..).enumerate() {
                m[(x, c)] = vv / s;
            }
        }
        let pi = ergodic_from_kernel(&m).unwrap();
        let res = (m.transpose() * &pi - &pi).amax();
        if res > 1e-10 {
            failures.push(format!("ergodic residual {res:.3e} > 1e-10"));
        }
    }

    let elapsed = t0.elapsed();
    if elapsed.as_secs_f64() > 5.0 {
        failures.push(format!("runtime {elapsed:?} > 5 s"));
    }
    verdict("1 dp-fixed-point", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 2: structural recovery at Table 6 medians, T = 20,000, 50 reps.
//
// Implemented exactly as specified: full two-step pipeline (kernel CCPs plus
// pseudo-likelihood) per replication, dollar parameters compared with the
// planted medians. The statistical analysis behind the observed pass rate is
// recorded outside the repo; the suite reports what it measures.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_2_structural_recovery() {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    let truth =
        StructuralParams::new(0.0036, 0.0219, 2.9658, 0.0341, 0.5, default_daily_beta()).unwrap();
    let demand = DemandParams {
        eta0_weekend: 0.3,
        eta0_holiday: 0.0,
        eta0_intercept: 0.644,
        eta_p: -0.62,
        eta_q: 1.287,
        alpha: 0.8,
    };
    let price = PriceProcess {
        levels: vec![15.0, 27.0],
        switch_prob: 0.10,
    };
    let markup = MarkupClass::from_markup(0.655).unwrap();
    let settings = SimSettings {
        pilot_days: 2000,
        holidays: vec![],
        ..SimSettings::default()
    };
    let agent = AgentModel::build(&truth, &demand, &markup, &price, &settings, 6006, 0, 0)
        .expect("agent model");

    let reps = 50u64;
    let mut ok_both = 0u32;
    let mut tz: Vec<f64> = Vec::new();
    let mut max_fit_secs = 0.0f64;
    let mut f_errs: Vec<f64> = Vec::new();
    let mut h_errs: Vec<f64> = Vec::new();
    for rep in 0..reps {
        let rows = simulate_panel_with_model(
            &agent, &demand, &price, 20_000, 9000 + rep, &settings, 0, 0,
        )
        .unwrap();
        let sample = estimation_sample(&rows, settings.burn_in);
        let t_fit = Instant::now();
        let opts = PipelineOptions::new(markup.lerner, 9000 + rep);
        match fit_structural_panel(&sample, &opts) {
            Ok(fit) => {
                let fe = (fit.structural.dollars[2] - truth.gamma_f).abs() / truth.gamma_f;
                let he = (fit.structural.dollars[0] - truth.gamma_h).abs() / truth.gamma_h;
                f_errs.push(fe);
                h_errs.push(he);
                if fe < 0.15 && he < 0.15 {
                    ok_both += 1;
                }
                tz.push(fit.structural.t_stats()[1].abs());
            }
            Err(e) => {
                f_errs.push(f64::INFINITY);
                h_errs.push(f64::INFINITY);
                println!("  rep {rep}: fit error: {e}");
            }
        }
        max_fit_secs = max_fit_secs.max(t_fit.elapsed().as_secs_f64());
    }
    tz.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_tz = if tz.is_empty() {
        f64::NAN
    } else {
        tz[tz.len() / 2]
    };
    let median_fe = stats::median(&f_errs);
    let median_he = stats::median(&h_errs);
    println!(
        "  recovery: {ok_both}/{reps} replications within 15% on both gamma_f and gamma_h \
(median |err| gamma_f {:.1}%, gamma_h {:.1}%); median |t_z| = {median_tz:.2}; \
max fit time {max_fit_secs:.1}s; suite {:.1}s",
        100.0 * median_fe,
        100.0 * median_he,
        t0.elapsed().as_secs_f64()
    );

    if (ok_both as f64) < 0.8 * reps as f64 {
        failures.push(format!(
            "recovery rate {ok_both}/{reps} below the 80% line"
        ));
    }
    if !(median_tz < 2.0) {
        failures.push(format!("median |t_z| = {median_tz:.2} not below 2"));
    }
    if max_fit_secs > 20.0 {
        failures.push(format!("slowest fit {max_fit_secs:.1}s exceeds 20 s"));
    }
    if t0.elapsed().as_secs_f64() > 1800.0 {
        failures.push("suite exceeded 30 minutes".into());
    }
    verdict("2 structural-recovery", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 3: comparative-statics sign suite over 5-point ladders.
// The ten determinate (parameter, outcome) pairs follow the classical
// comparative statics: holding cost moves both thresholds down, the stockout
// penalty (-gamma_z) moves both up, the fixed cost moves the lower threshold
// down and widens the band.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_3_comparative_statics() {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    let truth =
        StructuralParams::new(0.0036, 0.0219, 2.9658, 0.0341, 1.0, default_daily_beta()).unwrap();
    let demand = DemandParams {
        eta0_weekend: 0.15,
        eta0_holiday: 0.3,
        eta0_intercept: 2.27,
        eta_p: -0.62,
        eta_q: 0.52,
        alpha: 0.33,
    };
    let price = PriceProcess {
        levels: vec![24.30, 25.28],
        switch_prob: 0.03,
    };
    let markup = MarkupClass::from_markup(0.655).unwrap();
    let settings = SimSettings {
        pilot_days: 1200,
        ..SimSettings::default()
    };
    let agent = AgentModel::build(&truth, &demand, &markup, &price, &settings, 91, 0, 0).unwrap();
    let model = &agent.model;

    #[derive(Clone, Copy)]
    struct Point {
        sof: f64,
        ofr: f64,
        i2s: f64,
        pre: f64,
        post: f64,
    }
    let evaluate = |gamma: [f64; 4], warm: Option<&ValueVector>| -> (Point, ValueVector) {
        let params = StructuralParams::new(
            gamma[0],
            gamma[1],
            gamma[2],
            gamma[3],
            1.0,
            default_daily_beta(),
        )
        .unwrap();
        let v = solve_bellman_from(model, &params, &SolveOptions::default(), warm).unwrap();
        let p = ccp_from_values(model, &params, &v);
        let pi = ergodic_distribution(model, &p).unwrap();
        let st = outcome_stats(model, &p, &pi, &params).unwrap();
        (
            Point {
                sof: st.stockout_frequency,
                ofr: st.ordering_frequency,
                i2s: st.inv_to_sales,
                pre: st.inv_to_sales_before_order,
                post: st.inv_to_sales_after_order,
            },
            v,
        )
    };

    let base = [0.0036, 0.0219, 2.9658, 0.0341];
    let run_ladder = |idx: usize, values: &[f64]| -> Vec<Point> {
        let mut warm: Option<ValueVector> = None;
        values
            .iter()
            .map(|v| {
                let mut g = base;
                g[idx] = *v;
                let (pt, sol) = evaluate(g, warm.as_ref());
                warm = Some(sol);
                pt
            })
            .collect()
    };

    let h_ladder = run_ladder(0, &[0.0005, 0.0015, 0.0036, 0.007, 0.012]);
    // Ladder over the stockout penalty: gamma_z descending.
    let z_ladder = run_ladder(1, &[2.0, 1.0, 0.0, -1.0, -2.0]);
    let f_ladder = run_ladder(2, &[0.8, 1.8, 2.9658, 4.5, 6.5]);

    let monotone = |vals: Vec<f64>, up: bool| -> bool {
        vals.windows(2)
            .all(|w| if up { w[1] >= w[0] - 1e-12 } else { w[1] <= w[0] + 1e-12 })
    };
    let checks: Vec<(&str, Vec<f64>, bool)> = vec![
        ("stockout increasing in gamma_h", h_ladder.iter().map(|p| p.sof).collect(), true),
        ("inv/sales decreasing in gamma_h", h_ladder.iter().map(|p| p.i2s).collect(), false),
        ("pre-order ratio decreasing in gamma_h", h_ladder.iter().map(|p| p.pre).collect(), false),
        ("post-order ratio decreasing in gamma_h", h_ladder.iter().map(|p| p.post).collect(), false),
        ("stockout decreasing in stockout penalty", z_ladder.iter().map(|p| p.sof).collect(), false),
        ("inv/sales increasing in stockout penalty", z_ladder.iter().map(|p| p.i2s).collect(), true),
        ("pre-order ratio increasing in stockout penalty", z_ladder.iter().map(|p| p.pre).collect(), true),
        ("stockout increasing in gamma_f", f_ladder.iter().map(|p| p.sof).collect(), true),
        ("ordering decreasing in gamma_f", f_ladder.iter().map(|p| p.ofr).collect(), false),
        ("pre-order ratio decreasing in gamma_f", f_ladder.iter().map(|p| p.pre).collect(), false),
    ];
    assert_eq!(checks.len(), 10);
    for (name, vals, up) in checks {
        if !monotone(vals.clone(), up) {
            failures.push(format!("{name}: {vals:?}"));
        }
    }

    let elapsed = t0.elapsed();
    println!("  ladders solved in {:.1}s", elapsed.as_secs_f64());
    if elapsed.as_secs_f64() > 120.0 {
        failures.push(format!("ladder runtime {elapsed:?} > 2 min"));
    }
    verdict("3 comparative-statics", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 4: reduced-form Monte Carlo suite (200 replications).
// ---------------------------------------------------------------------------
#[test]
fn acceptance_4_reduced_form() {
    let mut failures = Vec::new();
    use invdp_core::ss_rules::{fit_order_probit, fit_ss_rules, shrink, SsObs};

    // Threshold-agent generator (mirrors the unit-test agent).
    struct Spec {
        beta_lower: [f64; 3],
        beta_upper: [f64; 3],
        sigma_lower: f64,
        sigma_upper: f64,
        rho: f64,
    }
    let simulate = |spec: &Spec, t: usize, seed: u64| -> Vec<SsObs> {
        let mut rng = stream_rng(seed, 0, 0, 0x61637373);
        let prices = [9.98f64, 12.40];
        let mut price = prices[0];
        let mut ln_de = 1.0f64;
        let mut k = 18.0f64;
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            if rng.gen::<f64>() < 0.12 {
                price = if price == prices[0] { prices[1] } else { prices[0] };
            }
            let mu = 1.4 - 0.4 * (price / prices[0]).ln();
            ln_de = mu + 0.6 * (ln_de - mu) + 0.3 * normal(&mut rng);
            let de = ln_de.exp();
            let z1 = normal(&mut rng);
            let z2 = normal(&mut rng);
            let u_s = spec.sigma_lower * z1;
            let u_up = spec.sigma_upper * (spec.rho * z1 + (1.0 - spec.rho * spec.rho).sqrt() * z2);
            let s_t =
                (spec.beta_lower[0] + spec.beta_lower[1] * ln_de + spec.beta_lower[2] * price.ln() + u_s)
                    .exp();
            let s_up = (spec.beta_upper[0]
                + spec.beta_upper[1] * ln_de
                + spec.beta_upper[2] * price.ln()
                + u_up)
                .exp();
            let ordered = k <= s_t;
            let stock_after = if ordered { s_up } else { k };
            out.push(SsObs {
                stock: k,
                expected_demand: de,
                price,
                ordered,
                stock_after,
            });
            let d = (de * (0.35 * normal(&mut rng)).exp()).max(0.0);
            k = (stock_after - d.min(stock_after)).max(0.0);
        }
        out
    };
    let base = Spec {
        beta_lower: [1.1, 0.8, 0.25],
        beta_upper: [2.4, 0.7, 0.15],
        sigma_lower: 0.45,
        sigma_upper: 0.35,
        rho: 0.0,
    };

    // Probit: negative stock coefficient in essentially every replication.
    let reps = 200u64;
    let mut bk_neg = 0u32;
    for r in 0..reps {
        let obs = simulate(&base, 2500, 10_000 + r);
        if fit_order_probit(&obs).map(|f| f.b[1] < 0.0).unwrap_or(false) {
            bk_neg += 1;
        }
    }
    if (bk_neg as f64) < 0.99 * reps as f64 {
        failures.push(format!("bk < 0 in only {bk_neg}/{reps}"));
    }

    // Heckman under independence: Mills CI covers zero in >= 90%.
    let mut covered = 0u32;
    for r in 0..reps {
        let obs = simulate(&base, 6000, 20_000 + r);
        if let Ok(fit) = fit_ss_rules(&obs) {
            if fit.upper.beta[3].abs() <= 1.96 * fit.upper.se[3] {
                covered += 1;
            }
        }
    }
    if (covered as f64) < 0.9 * reps as f64 {
        failures.push(format!("Mills coverage {covered}/{reps} below 90%"));
    }

    // Correlated shocks: Heckman intercept beats naive OLS in >= 80%.
    let corr = Spec { rho: 0.6, ..base };
    let mut wins = 0u32;
    for r in 0..reps {
        let obs = simulate(&corr, 10_000, 30_000 + r);
        let Ok(fit) = fit_ss_rules(&obs) else { continue };
        let selected: Vec<&SsObs> = obs.iter().filter(|o| o.ordered).collect();
        let m = selected.len();
        let mut x = DMatrix::<f64>::zeros(m, 3);
        let mut y = DVector::<f64>::zeros(m);
        for (i, o) in selected.iter().enumerate() {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = o.expected_demand.ln();
            x[(i, 2)] = o.price.ln();
            y[i] = o.stock_after.ln();
        }
        let naive = stats::ols(&y, &x).unwrap();
        if (fit.upper.beta[0] - corr.beta_upper[0]).abs()
            < (naive.coef[0] - corr.beta_upper[0]).abs()
        {
            wins += 1;
        }
    }
    if (wins as f64) < 0.8 * reps as f64 {
        failures.push(format!("Heckman bias wins {wins}/{reps} below 80%"));
    }

    // Shrinkage variance identity (homogeneous noise) to 1e-10.
    let estimates: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let se = 0.6f64;
    let shrunk = shrink(&estimates, &vec![se; 50]).unwrap();
    let var_raw = stats::variance_pop(&estimates);
    let var_shrunk = stats::variance_pop(&shrunk);
    let identity_err = (var_shrunk - (var_raw - se * se)).abs();
    if identity_err > 1e-10 {
        failures.push(format!("shrinkage identity error {identity_err:.3e}"));
    }
    let mean_err = (stats::mean(&shrunk) - stats::mean(&estimates)).abs();
    if mean_err > 1e-12 {
        failures.push(format!("shrinkage mean drift {mean_err:.3e}"));
    }

    println!(
        "  probit bk<0 {bk_neg}/{reps}; Mills coverage {covered}/{reps}; Heckman wins {wins}/{reps}"
    );
    verdict("4 reduced-form", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 5: demand suite.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_5_demand() {
    let mut failures = Vec::new();

    let truth = DemandParams {
        eta0_weekend: 0.15,
        eta0_holiday: 0.3,
        eta0_intercept: 2.1,
        eta_p: -0.62,
        eta_q: 0.52,
        alpha: 0.33,
    };

    // Simulator for demand rows (ample stock, rolling trailing average).
    let simulate = |params: &DemandParams, t: usize, seed: u64| {
        let mut rng = stream_rng(seed, 0, 0, 0xdeed);
        let prices = [9.98, 11.5];
        let mut price = prices[0];
        let mut buffer = vec![2.0f64; 7];
        let mut rows = Vec::with_capacity(t);
        for day in 0..t {
            if rng.gen::<f64>() < 0.05 {
                price = if price == prices[0] { prices[1] } else { prices[0] };
            }
            let weekend = day % 7 == 5 || day % 7 == 6;
            let holiday = day % 97 == 40;
            let q7 = buffer.iter().sum::<f64>() / 7.0;
            let de = params.expected_demand(price, q7, weekend, holiday);
            let d = invdp_core::negbin::sample(de.max(1e-8), params.alpha, rng.gen()).unwrap();
            rows.push(invdp_core::types::PanelRow {
                store_id: 0,
                product_id: 0,
                day: day as u32,
                inventory: 500,
                order: 0,
                demand: Some(d),
                sales: d,
                price,
                trailing7: q7,
                weekend,
                holiday,
            });
            buffer.rotate_left(1);
            buffer[6] = d as f64;
        }
        rows
    };

    // Gradient vs central finite differences at the fitted optimum: the
    // fitted score must vanish in relative terms.
    let rows = simulate(&truth, 4000, 17);
    let fit = fit_negbin(&rows).unwrap();
    if fit.grad_norm / (1.0 + fit.loglik.abs()) > 1e-6 {
        failures.push(format!(
            "score at optimum {:.3e} too large",
            fit.grad_norm / (1.0 + fit.loglik.abs())
        ));
    }

    // Poisson-limit recovery: alpha estimate below 0.02 in >= 90%.
    let poisson = DemandParams { alpha: 0.0, ..truth };
    let mut small_alpha = 0u32;
    let reps_p = 40u64;
    for r in 0..reps_p {
        let rows = simulate(&poisson, 5000, 40_000 + r);
        if fit_negbin(&rows).map(|f| f.params.alpha < 0.02).unwrap_or(false) {
            small_alpha += 1;
        }
    }
    if (small_alpha as f64) < 0.9 * reps_p as f64 {
        failures.push(format!("Poisson-limit recovery {small_alpha}/{reps_p}"));
    }

    // Planted-coefficient 95% CI coverage over 200 replications.
    let reps = 200u64;
    let mut cover = [0u32; 3]; // eta_p, eta_q, alpha
    for r in 0..reps {
        let rows = simulate(&truth, 2500, 50_000 + r);
        if let Ok(f) = fit_negbin(&rows) {
            if (f.params.eta_p - truth.eta_p).abs() <= 1.96 * f.se[3] {
                cover[0] += 1;
            }
            if (f.params.eta_q - truth.eta_q).abs() <= 1.96 * f.se[4] {
                cover[1] += 1;
            }
            if (f.params.alpha - truth.alpha).abs() <= 1.96 * f.se[5] {
                cover[2] += 1;
            }
        }
    }
    for (name, c) in ["eta_p", "eta_q", "alpha"].iter().zip(cover.iter()) {
        if (*c as f64) < 0.9 * reps as f64 {
            failures.push(format!("{name} coverage {c}/{reps} below 90%"));
        }
    }

    println!(
        "  Poisson-limit {small_alpha}/{reps_p}; coverage eta_p {} eta_q {} alpha {} (of {reps})",
        cover[0], cover[1], cover[2]
    );
    verdict("5 demand", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 6: counterfactual suite.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_6_counterfactuals() {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    // Toy with an informative trailing-sales state for the exact checks.
    let toy = {
        use invdp_core::dp::transition::{build_transitions, weekend_cycle_kernel, ExogKernels};
        use invdp_core::dp::StateSpace;
        let space = StateSpace {
            k_grid: (0..=12).map(|i| 2 * i).collect(),
            y_grid: vec![0, 6, 12],
            price_centers: vec![10.0],
            lnq_centers: vec![(2.0f64).ln(), (6.0f64).ln()],
        };
        let eta_q = (5.0f64 / 1.0).ln() / ((6.0f64 / 2.0).ln());
        let icept = (1.0f64).ln() - eta_q * (2.0f64).ln();
        let demand = DemandParams {
            eta0_weekend: 0.0,
            eta0_holiday: 0.0,
            eta0_intercept: icept,
            eta_p: 0.0,
            eta_q,
            alpha: 0.4,
        };
        let pq = DMatrix::from_fn(2, 2, |i, j| if i == j { 0.9 } else { 0.1 });
        let kernels = ExogKernels {
            price: DMatrix::from_element(1, 1, 1.0),
            q_by_tercile: [pq.clone(), pq.clone(), pq],
            sales_terciles: [1.0, 3.0],
            weekend: weekend_cycle_kernel(),
            holiday: [[1.0, 0.0], [1.0, 0.0]],
            warnings: vec![],
        };
        build_transitions(space, demand, 0.4, &kernels).unwrap()
    };
    let table6 = [0.0036, 0.0219, 2.9658, 0.0341];
    let beta = default_daily_beta();

    // Zero noise, zero delay: exact equivalence.
    let r0 = centralization_experiment(&toy, table6, [0.0; 4], 1.0, beta, 0).unwrap();
    if r0.gain_abs != 0.0 || r0.inv_cost_change_pct != 0.0 {
        failures.push(format!(
            "zero-noise/zero-delay gain not exactly zero: {} / {}",
            r0.gain_abs, r0.inv_cost_change_pct
        ));
    }

    // Information ordering on every toy instance: delay never raises profit
    // absent manager noise.
    for delay in [1u32, 7, 21] {
        let r = centralization_experiment(&toy, table6, [0.0; 4], 1.0, beta, delay).unwrap();
        if r.centralized.flow_profit > r0.centralized.flow_profit + 1e-9 {
            failures.push(format!(
                "delay {delay} increased profit: {} > {}",
                r.centralized.flow_profit, r0.centralized.flow_profit
            ));
        }
    }

    // Calibrated chain: qualitative Table 9 / Table 10 pattern.
    let mut spec = ChainSpec::synthetic(8, 1, 420, 4242);
    spec.settings.pilot_days = 900;
    spec.noise.base_scale = [0.0018, 0.09, 1.2, 0.016];
    let data = synthesize_chain(&spec, 4242).unwrap();
    let mut cost_changes = Vec::new();
    let mut gains = Vec::new();
    for (unit, truth) in data.panels.iter().zip(data.truth.iter()) {
        let model = &unit.agent.model;
        let sd = shutdown_suite(
            model,
            truth.gamma_sto,
            truth.gamma_man,
            spec.sigma_eps,
            spec.beta,
        )
        .unwrap();
        let all = sd
            .iter()
            .find(|r| r.which.as_str() == "all")
            .expect("all-shutdown run");
        cost_changes.push(all.inventory_cost_change_pct);
        let c = centralization_experiment(
            model,
            truth.gamma_sto,
            truth.gamma_man,
            spec.sigma_eps,
            spec.beta,
            7,
        )
        .unwrap();
        gains.push(c.gain_pct);
    }
    let mean_cost_change = stats::mean(&cost_changes);
    let mean_gain = stats::mean(&gains);
    println!(
        "  chain: mean all-shutdown inventory-cost change {mean_cost_change:+.2}% \
(reference magnitude -12.08%), mean decentralization gain {mean_gain:+.2}% \
(reference magnitude -1.97%); elapsed {:.0}s",
        t0.elapsed().as_secs_f64()
    );
    if !(mean_cost_change < 0.0) {
        failures.push(format!(
            "all-shutdown mean inventory-cost change {mean_cost_change:+.2}% not negative"
        ));
    }
    if !(mean_gain < 0.0) {
        failures.push(format!(
            "mean decentralization profit gain {mean_gain:+.2}% not negative"
        ));
    }

    verdict("6 counterfactuals", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 7: end-to-end determinism of the CLI artifact tree.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_7_determinism() {
    let mut failures = Vec::new();
    let bin = env!("CARGO_BIN_EXE_invdp");
    let base = std::env::temp_dir().join("invdp_acceptance7");
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();

    let config = serde_json::json!({
        "schema_version": "1",
        "seed": 31337,
        "workers": 2,
        "out_dir": base.join("a").display().to_string(),
        "chain": { "n_stores": 2, "n_products": 1, "n_days": 240, "pilot_days": 500 },
        "counterfactual": { "delay_days": 7, "use_truth_tables": true }
    });
    let cfg_path = base.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let run = |out: &std::path::Path, extra: &[&str]| -> i32 {
        let mut cmd = std::process::Command::new(bin);
        cmd.arg("simulate")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(out);
        for e in extra {
            cmd.arg(e);
        }
        cmd.status().map(|s| s.code().unwrap_or(-1)).unwrap_or(-1)
    };
    let out_a = base.join("a");
    let out_b = base.join("b");
    if run(&out_a, &[]) != 0 {
        failures.push("first simulate run failed".into());
    }
    // Second run: different directory and worker count; bytes must match.
    if run(&out_b, &["--workers", "1"]) != 0 {
        failures.push("second simulate run failed".into());
    }
    for name in ["panels.csv", "stores.csv", "managers.csv", "truth_gamma.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap_or_default();
        let b = std::fs::read(out_b.join(name)).unwrap_or_default();
        if a.is_empty() || a != b {
            failures.push(format!("{name} differs between identical runs"));
        }
    }

    // Config validation: beta = 1.2 exits 1 and names the field.
    let bad = serde_json::json!({
        "schema_version": "1",
        "solver": { "beta": 1.2 }
    });
    let bad_path = base.join("bad.json");
    std::fs::write(&bad_path, serde_json::to_string(&bad).unwrap()).unwrap();
    let out = std::process::Command::new(bin)
        .arg("simulate")
        .arg("--config")
        .arg(&bad_path)
        .output()
        .unwrap();
    if out.status.code() != Some(1) {
        failures.push(format!(
            "beta=1.2 exited {:?}, expected 1",
            out.status.code()
        ));
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    if !stderr.contains("solver.beta") {
        failures.push(format!("error message does not name the field: {stderr}"));
    }

    verdict("7 determinism", &failures);
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------------------
// Supporting check from the reduced-form module: heterogeneity detection
// grows with the planted scale (3-point ladder over store heterogeneity).
// ---------------------------------------------------------------------------
#[test]
fn homogeneity_band_detection_ladder() {
    let mut fractions = Vec::new();
    for (i, scale) in [0.0f64, 0.4, 1.6].iter().enumerate() {
        let mut rng = stream_rng(400 + i as u64, 0, 0, 7);
        let n = 80;
        let estimates: Vec<f64> = (0..n).map(|_| 1.0 + scale * normal(&mut rng)).collect();
        let ses = vec![0.1; n];
        fractions.push(ss_rules::homogeneity_outside_fraction(&estimates, &ses));
    }
    assert!(fractions[0] <= fractions[1] && fractions[1] <= fractions[2]);
    let mut rng = stream_rng(900, 0, 0, 9);
    let _ = gumbel(&mut rng);
}
