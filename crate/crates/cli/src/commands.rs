//! Subcommand implementations.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use invdp_core::counterfactual::{
    centralization_experiment, cost_revenue_ratios, decompose_costs, shutdown_suite,
    GammaEstimate, ShutdownComponent,
};
use invdp_core::demand::fit_negbin;
use invdp_core::sim::chain::{planted_gammas, ChainSpec, Education, ManagerSpec, StoreClass, StoreSpec};
use invdp_core::sim::chain::synthesize_chain;
use invdp_core::sim::estimation_sample;
use invdp_core::ss_rules::{
    fit_ss_rules, homogeneity_outside_fraction, obs_from_panel, shrink, thresholds_at,
    variance_decomposition,
};
use invdp_core::stats;
use invdp_core::structural::pipeline::{fit_structural_panel, PipelineOptions};
use invdp_core::types::{MarkupClass, PanelRow, StructuralParams};

use crate::artifacts::{group_by_unit, panel_row_to_csv, read_panels, ArtifactSet, PANEL_HEADER};
use crate::config::RunConfig;
use crate::log_info;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| anyhow!("building worker pool: {e}"))
}

fn chain_spec(cfg: &RunConfig) -> ChainSpec {
    let mut spec = ChainSpec::synthetic(
        cfg.chain.n_stores,
        cfg.chain.n_products,
        cfg.chain.n_days,
        cfg.seed,
    );
    spec.sigma_eps = cfg.chain.sigma_eps;
    spec.beta = cfg.solver.beta;
    spec.settings = cfg.sim_settings();
    for s in spec.noise.base_scale.iter_mut() {
        *s *= cfg.chain.manager_noise_mult;
    }
    spec.noise.education_gradient = cfg.chain.education_gradient;
    spec.noise.experience_gradient = cfg.chain.experience_gradient;
    for p in spec.products.iter_mut() {
        p.price.switch_prob = cfg.chain.price_switch_prob;
        p.markup = cfg.markup_for(p.product_id);
    }
    spec
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = ArtifactSet::new(out, &cfg.hash(), cfg.seed)?;
    let result = simulate_body(cfg, &mut art);
    if result.is_err() {
        art.remove_partial();
    }
    result
}

fn simulate_body(cfg: &RunConfig, art: &mut ArtifactSet) -> Result<()> {
    let spec = chain_spec(cfg);
    spec.validate().map_err(|e| anyhow!(e))?;
    log_info(&format!(
        "simulating chain: {} stores x {} products x {} days",
        cfg.chain.n_stores, cfg.chain.n_products, cfg.chain.n_days
    ));
    let data = pool(cfg.workers)?.install(|| synthesize_chain(&spec, cfg.seed))?;

    let mut panel_rows = Vec::new();
    for unit in &data.panels {
        for r in &unit.rows {
            panel_rows.push(panel_row_to_csv(r));
        }
    }
    art.write_csv("panels.csv", PANEL_HEADER, &panel_rows)?;

    let store_rows: Vec<String> = spec
        .stores
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{}",
                s.store_id,
                s.class.as_str(),
                s.log_assortment,
                s.log_population,
                s.log_income,
                s.region
            )
        })
        .collect();
    art.write_csv(
        "stores.csv",
        "store_id,class,log_assortment,log_population,log_income,region",
        &store_rows,
    )?;

    let manager_rows: Vec<String> = spec
        .managers
        .iter()
        .map(|m| {
            format!(
                "{},{},{},{}",
                m.store_id,
                m.education.as_str(),
                m.years_lcbo,
                m.years_other
            )
        })
        .collect();
    art.write_csv(
        "managers.csv",
        "store_id,education,years_lcbo,years_other",
        &manager_rows,
    )?;

    let truth_rows: Vec<String> = data
        .truth
        .iter()
        .map(|t| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                t.store_id,
                t.product_id,
                t.gamma_sto[0],
                t.gamma_sto[1],
                t.gamma_sto[2],
                t.gamma_sto[3],
                t.gamma_man[0],
                t.gamma_man[1],
                t.gamma_man[2],
                t.gamma_man[3],
            )
        })
        .collect();
    art.write_csv(
        "truth_gamma.csv",
        "store_id,product_id,gsto_h,gsto_z,gsto_f,gsto_c,gman_h,gman_z,gman_f,gman_c",
        &truth_rows,
    )?;
    log_info("simulate: wrote panels.csv, stores.csv, managers.csv, truth_gamma.csv");
    Ok(())
}

fn load_units(cfg: &RunConfig, out: &Path) -> Result<Vec<((u32, u32), Vec<PanelRow>)>> {
    let rows = read_panels(&out.join("panels.csv"))?;
    let units = group_by_unit(rows);
    let burn = cfg.chain.burn_in;
    Ok(units
        .into_iter()
        .map(|(k, v)| (k, estimation_sample(&v, burn)))
        .collect())
}

pub fn fit_demand(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = ArtifactSet::new(out, &cfg.hash(), cfg.seed)?;
    let r = fit_demand_body(cfg, out, &mut art);
    if r.is_err() {
        art.remove_partial();
    }
    r
}

fn fit_demand_body(cfg: &RunConfig, out: &Path, art: &mut ArtifactSet) -> Result<()> {
    let units = load_units(cfg, out)?;
    let fits: Vec<_> = pool(cfg.workers)?.install(|| {
        units
            .par_iter()
            .map(|((s, p), rows)| ((*s, *p), fit_negbin(rows)))
            .collect::<Vec<_>>()
    });
    let mut lines = Vec::new();
    for ((s, p), fit) in fits {
        match fit {
            Ok(f) => lines.push(format!(
                "{s},{p},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                f.params.eta0_weekend,
                f.params.eta0_holiday,
                f.params.eta0_intercept,
                f.params.eta_p,
                f.params.eta_q,
                f.params.alpha,
                f.se[0],
                f.se[1],
                f.se[2],
                f.se[3],
                f.se[4],
                f.se[5],
                f.loglik,
                f.pseudo_r2,
                f.n_obs,
                f.iterations,
            )),
            Err(e) => {
                log_info(&format!("fit-demand: unit ({s},{p}) skipped: {e}"));
            }
        }
    }
    if lines.is_empty() {
        bail!("no unit produced a demand fit");
    }
    art.write_csv(
        "demand_fits.csv",
        "store_id,product_id,eta0_weekend,eta0_holiday,eta0_intercept,eta_p,eta_q,alpha,\
se_weekend,se_holiday,se_intercept,se_p,se_q,se_alpha,loglik,pseudo_r2,n_obs,iterations",
        &lines,
    )?;
    log_info(&format!("fit-demand: wrote {} unit fits", lines.len()));
    Ok(())
}

pub fn fit_ss(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = ArtifactSet::new(out, &cfg.hash(), cfg.seed)?;
    let r = fit_ss_body(cfg, out, &mut art);
    if r.is_err() {
        art.remove_partial();
    }
    r
}

struct SsUnitRow {
    store: u32,
    product: u32,
    b: [f64; 4],
    se_b: [f64; 4],
    sigma_u: f64,
    beta_lower: [f64; 3],
    beta_upper: [f64; 4],
    se_upper: [f64; 4],
    log_s0: f64,
    log_s_upper0: f64,
}

fn fit_ss_body(cfg: &RunConfig, out: &Path, art: &mut ArtifactSet) -> Result<()> {
    let units = load_units(cfg, out)?;
    let results: Vec<_> = pool(cfg.workers)?.install(|| {
        units
            .par_iter()
            .map(|((s, p), rows)| {
                let run = || -> invdp_core::Result<SsUnitRow> {
                    let demand = fit_negbin(rows)?;
                    let obs = obs_from_panel(rows, &demand);
                    let fit = fit_ss_rules(&obs)?;
                    let ln_de = stats::mean(
                        &obs.iter().map(|o| o.expected_demand.ln()).collect::<Vec<_>>(),
                    );
                    let ln_p = stats::mean(&obs.iter().map(|o| o.price.ln()).collect::<Vec<_>>());
                    let th = thresholds_at(&fit, ln_de, ln_p);
                    Ok(SsUnitRow {
                        store: *s,
                        product: *p,
                        b: fit.lower.b,
                        se_b: fit.lower.se,
                        sigma_u: fit.lower.sigma_u,
                        beta_lower: fit.lower.beta,
                        beta_upper: fit.upper.beta,
                        se_upper: fit.upper.se,
                        log_s0: th.log_s0,
                        log_s_upper0: th.log_s_upper0,
                    })
                };
                ((*s, *p), run())
            })
            .collect::<Vec<_>>()
    });

    let mut rows: Vec<SsUnitRow> = Vec::new();
    for ((s, p), r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => log_info(&format!("fit-ss: unit ({s},{p}) skipped: {e}")),
        }
    }
    if rows.is_empty() {
        bail!("no unit produced an (S,s) fit");
    }

    // Shrinkage per coefficient family across units (identity when the
    // cross-sectional variance is degenerate).
    let shrink_or_raw = |vals: &[f64], ses: &[f64]| -> Vec<f64> {
        match shrink(vals, ses) {
            Ok(v) => v,
            Err(_) => vals.to_vec(),
        }
    };
    let col =
        |f: &dyn Fn(&SsUnitRow) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
    let shrunk_bk = shrink_or_raw(&col(&|r| r.b[1]), &col(&|r| r.se_b[1]));
    let shrunk_bd = shrink_or_raw(&col(&|r| r.b[2]), &col(&|r| r.se_b[2]));
    let shrunk_up0 = shrink_or_raw(&col(&|r| r.beta_upper[0]), &col(&|r| r.se_upper[0]));
    let shrunk_upd = shrink_or_raw(&col(&|r| r.beta_upper[1]), &col(&|r| r.se_upper[1]));

    let mut lines = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        lines.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.store,
            r.product,
            r.b[0],
            r.b[1],
            r.b[2],
            r.b[3],
            r.se_b[0],
            r.se_b[1],
            r.se_b[2],
            r.se_b[3],
            r.sigma_u,
            r.beta_lower[0],
            r.beta_lower[1],
            r.beta_lower[2],
            r.beta_upper[0],
            r.beta_upper[1],
            r.beta_upper[2],
            r.beta_upper[3],
            r.se_upper[0],
            r.se_upper[1],
            r.se_upper[2],
            r.se_upper[3],
            r.log_s0,
            r.log_s_upper0,
            format!(
                "{},{},{},{}",
                shrunk_bk[i], shrunk_bd[i], shrunk_up0[i], shrunk_upd[i]
            ),
        ));
    }
    art.write_csv(
        "ss_fits.csv",
        "store_id,product_id,b0_s,bk_s,bd_s,bp_s,se_b0_s,se_bk_s,se_bd_s,se_bp_s,sigma_u,\
beta0_s,betad_s,betap_s,beta0_up,betad_up,betap_up,mills,se_beta0_up,se_betad_up,se_betap_up,\
se_mills,log_s0,log_s_upper0,shrunk_bk_s,shrunk_bd_s,shrunk_beta0_up,shrunk_betad_up",
        &lines,
    )?;

    // Chain-level diagnostics: variance decomposition of the log-thresholds
    // and homogeneity test fractions (store averages, Bonferroni bands).
    let mut summary = serde_json::Map::new();
    let keyed_s0: Vec<(u32, u32, f64)> =
        rows.iter().map(|r| (r.store, r.product, r.log_s0)).collect();
    let keyed_up: Vec<(u32, u32, f64)> = rows
        .iter()
        .map(|r| (r.store, r.product, r.log_s_upper0))
        .collect();
    if let Ok((b, w)) = variance_decomposition(&keyed_s0) {
        summary.insert("log_s0_between_store_var".into(), b.into());
        summary.insert("log_s0_within_store_var".into(), w.into());
    }
    if let Ok((b, w)) = variance_decomposition(&keyed_up) {
        summary.insert("log_s_upper0_between_store_var".into(), b.into());
        summary.insert("log_s_upper0_within_store_var".into(), w.into());
    }
    let frac = homogeneity_outside_fraction(&col(&|r| r.b[1]), &col(&|r| r.se_b[1]));
    summary.insert("bk_s_outside_band_fraction".into(), frac.into());
    art.write_json("ss_summary.json", &serde_json::Value::Object(summary))?;
    log_info(&format!("fit-ss: wrote {} unit fits", lines.len()));
    Ok(())
}

pub fn fit_structural(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = ArtifactSet::new(out, &cfg.hash(), cfg.seed)?;
    let r = fit_structural_body(cfg, out, &mut art);
    if r.is_err() {
        art.remove_partial();
    }
    r
}

fn fit_structural_body(cfg: &RunConfig, out: &Path, art: &mut ArtifactSet) -> Result<()> {
    let units = load_units(cfg, out)?;
    let beta = cfg.solver.beta;
    let fits: Vec<_> = pool(cfg.workers)?.install(|| {
        units
            .par_iter()
            .map(|((s, p), rows)| {
                let markup = MarkupClass::from_markup(cfg.markup_for(*p))
                    .map(|m| m.lerner)
                    .unwrap_or(0.4);
                let mut opts = PipelineOptions::new(markup, cfg.seed ^ ((*s as u64) << 17) ^ *p as u64);
                opts.beta = beta;
                opts.floor_diagnostic = false;
                ((*s, *p), fit_structural_panel(rows, &opts))
            })
            .collect::<Vec<_>>()
    });

    let names = ["gamma_h", "gamma_z", "gamma_f", "gamma_c"];
    let mut lines = Vec::new();
    let mut by_param: [Vec<f64>; 4] = Default::default();
    let mut diag = Vec::new();
    for ((s, p), fit) in fits {
        match fit {
            Ok(f) => {
                let t = f.structural.t_stats();
                for j in 0..4 {
                    lines.push(format!(
                        "{s},{p},{},{},{},{}",
                        names[j], f.structural.dollars[j], f.structural.se_dollars[j], t[j]
                    ));
                    by_param[j].push(f.structural.dollars[j]);
                }
                diag.push(serde_json::json!({
                    "store_id": s,
                    "product_id": p,
                    "gamma_tilde": f.structural.gamma_tilde,
                    "se_tilde": f.structural.se_tilde,
                    "pseudo_loglik": f.structural.pseudo_loglik,
                    "n_obs": f.structural.n_obs,
                    "iterations": f.structural.iterations,
                    "scale_identified": f.structural.scale_identified,
                    "warnings": f.warnings,
                }));
            }
            Err(e) => log_info(&format!("fit-structural: unit ({s},{p}) skipped: {e}")),
        }
    }
    if lines.is_empty() {
        bail!("no unit produced a structural fit");
    }
    art.write_csv(
        "structural_fits.csv",
        "store_id,product_id,parameter,estimate,se,t_stat",
        &lines,
    )?;

    let mut summary_lines = Vec::new();
    for j in 0..4 {
        let v = &by_param[j];
        summary_lines.push(format!(
            "{},{},{},{}",
            names[j],
            stats::median(v),
            stats::variance_sample(v).sqrt(),
            v.len()
        ));
    }
    art.write_csv(
        "structural_summary.csv",
        "parameter,median_estimate,sd_estimate,n_units",
        &summary_lines,
    )?;
    art.write_json("structural_diag.json", &serde_json::Value::Array(diag))?;
    log_info(&format!(
        "fit-structural: wrote {} parameter rows",
        lines.len()
    ));
    Ok(())
}

fn parse_stores(path: &Path) -> Result<Vec<StoreSpec>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let class = StoreClass::ALL
            .iter()
            .find(|c| c.as_str() == f[1])
            .copied()
            .ok_or_else(|| anyhow!("unknown store class {}", f[1]))?;
        out.push(StoreSpec {
            store_id: f[0].parse()?,
            class,
            log_assortment: f[2].parse()?,
            log_population: f[3].parse()?,
            log_income: f[4].parse()?,
            region: f[5].parse()?,
        });
    }
    out.sort_by_key(|s| s.store_id);
    Ok(out)
}

fn parse_managers(path: &Path) -> Result<Vec<ManagerSpec>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let education = match f[1] {
            "high_school" => Education::HighSchool,
            "college" => Education::College,
            "university" => Education::University,
            other => bail!("unknown education level {other}"),
        };
        out.push(ManagerSpec {
            store_id: f[0].parse()?,
            education,
            years_lcbo: f[2].parse()?,
            years_other: f[3].parse()?,
        });
    }
    out.sort_by_key(|m| m.store_id);
    Ok(out)
}

fn load_gamma_estimates(cfg: &RunConfig, out: &Path) -> Result<Vec<GammaEstimate>> {
    if cfg.counterfactual.use_truth_tables {
        let text = std::fs::read_to_string(out.join("truth_gamma.csv"))
            .context("reading truth_gamma.csv (run `simulate` first)")?;
        let mut v = Vec::new();
        for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let g = |i: usize| -> Result<f64> { Ok(f[i].parse::<f64>()?) };
            v.push(GammaEstimate {
                store_id: f[0].parse()?,
                product_id: f[1].parse()?,
                gamma: [g(2)? + g(6)?, g(3)? + g(7)?, g(4)? + g(8)?, g(5)? + g(9)?],
            });
        }
        Ok(v)
    } else {
        let text = std::fs::read_to_string(out.join("structural_fits.csv"))
            .context("reading structural_fits.csv (run `fit-structural` first)")?;
        use std::collections::BTreeMap;
        let mut map: BTreeMap<(u32, u32), [f64; 4]> = BTreeMap::new();
        for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let key = (f[0].parse()?, f[1].parse()?);
            let idx = match f[2] {
                "gamma_h" => 0,
                "gamma_z" => 1,
                "gamma_f" => 2,
                "gamma_c" => 3,
                other => bail!("unknown parameter {other}"),
            };
            map.entry(key).or_insert([0.0; 4])[idx] = f[3].parse()?;
        }
        Ok(map
            .into_iter()
            .map(|((s, p), gamma)| GammaEstimate {
                store_id: s,
                product_id: p,
                gamma,
            })
            .collect())
    }
}

pub fn counterfact(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = ArtifactSet::new(out, &cfg.hash(), cfg.seed)?;
    let r = counterfact_body(cfg, out, &mut art);
    if r.is_err() {
        art.remove_partial();
    }
    r
}

fn counterfact_body(cfg: &RunConfig, out: &Path, art: &mut ArtifactSet) -> Result<()> {
    let units = load_units(cfg, out)?;
    let stores = parse_stores(&out.join("stores.csv"))?;
    let managers = parse_managers(&out.join("managers.csv"))?;
    let estimates = load_gamma_estimates(cfg, out)?;
    let n_products = cfg.chain.n_products as usize;
    let decomp = decompose_costs(&estimates, &stores, &managers, n_products, 4)?;

    #[allow(clippy::type_complexity)]
    let results: Vec<(
        (u32, u32),
        Result<(
            Vec<invdp_core::counterfactual::ShutdownResult>,
            invdp_core::counterfactual::CentralizationResult,
            invdp_core::counterfactual::CostRatios,
        )>,
    )> = pool(cfg.workers)?.install(|| {
        units
            .par_iter()
            .map(|((s, p), rows)| {
                let run = || -> Result<_> {
                    let row = decomp
                        .rows
                        .iter()
                        .find(|r| r.store_id == *s && r.product_id == *p)
                        .ok_or_else(|| anyhow!("no decomposition for unit ({s},{p})"))?;
                    // Rebuild the unit's discrete model from its panel.
                    let demand = fit_negbin(rows)?;
                    let disc = invdp_core::dp::discretize::discretize(
                        rows,
                        invdp_core::dp::default_k_grid(),
                        invdp_core::dp::default_y_grid(),
                        2,
                        cfg.seed ^ ((*s as u64) << 17) ^ *p as u64,
                    )?;
                    let kernels =
                        invdp_core::dp::transition::ExogKernels::from_panel(rows, &disc.space)?;
                    let lerner = MarkupClass::from_markup(cfg.markup_for(*p))?.lerner;
                    let model = invdp_core::dp::transition::build_transitions(
                        disc.space.clone(),
                        demand.params,
                        lerner,
                        &kernels,
                    )?;

                    let shutdowns = shutdown_suite(
                        &model,
                        row.gamma_sto,
                        row.gamma_man,
                        cfg.chain.sigma_eps,
                        cfg.solver.beta,
                    )?;
                    let central = centralization_experiment(
                        &model,
                        row.gamma_sto,
                        row.gamma_man,
                        cfg.chain.sigma_eps,
                        cfg.solver.beta,
                        cfg.counterfactual.delay_days,
                    )?;
                    let factual_gamma = [
                        row.gamma_sto[0] + row.gamma_man[0],
                        row.gamma_sto[1] + row.gamma_man[1],
                        (row.gamma_sto[2] + row.gamma_man[2]).max(0.0),
                        row.gamma_sto[3] + row.gamma_man[3],
                    ];
                    let acc = StructuralParams::new(
                        factual_gamma[0].max(0.0),
                        factual_gamma[1],
                        factual_gamma[2],
                        factual_gamma[3].max(0.0),
                        cfg.chain.sigma_eps,
                        cfg.solver.beta,
                    )?;
                    let ratios = cost_revenue_ratios(rows, &acc)?;
                    Ok((shutdowns, central, ratios))
                };
                ((*s, *p), run())
            })
            .collect::<Vec<_>>()
    });

    // Aggregate Table-9-style shutdown rows and Table-10-style
    // centralization percentiles; write per-unit JSON details.
    let mut per_component: std::collections::BTreeMap<&'static str, Vec<[f64; 6]>> =
        Default::default();
    let mut factuals: Vec<[f64; 5]> = Vec::new();
    let mut central_rows: Vec<[f64; 5]> = Vec::new();
    let mut ratio_rows: Vec<[f64; 5]> = Vec::new();
    let mut n_ok = 0usize;
    for ((s, p), r) in &results {
        match r {
            Ok((shutdowns, central, ratios)) => {
                n_ok += 1;
                for sd in shutdowns {
                    per_component.entry(sd.which.as_str()).or_default().push([
                        sd.counterfactual.stockout_frequency,
                        sd.counterfactual.ordering_frequency,
                        sd.counterfactual.inv_to_sales,
                        sd.counterfactual.inv_to_sales_after_order,
                        sd.counterfactual.inv_to_sales_before_order,
                        sd.inventory_cost_change_pct,
                    ]);
                }
                let f = &shutdowns[0].factual;
                factuals.push([
                    f.stockout_frequency,
                    f.ordering_frequency,
                    f.inv_to_sales,
                    f.inv_to_sales_after_order,
                    f.inv_to_sales_before_order,
                ]);
                central_rows.push([
                    central.centralized.flow_profit,
                    central.decentralized.flow_profit,
                    central.gain_abs,
                    central.gain_pct,
                    central.inv_cost_change_pct,
                ]);
                ratio_rows.push([
                    ratios.holding,
                    ratios.stockout,
                    ratios.fixed,
                    ratios.variable,
                    ratios.total,
                ]);
                let detail = serde_json::json!({
                    "store_id": s,
                    "product_id": p,
                    "factual": {
                        "stockout_frequency": f.stockout_frequency,
                        "ordering_frequency": f.ordering_frequency,
                        "inv_to_sales": f.inv_to_sales,
                        "flow_profit": f.flow_profit,
                        "inventory_cost": f.inventory_cost,
                    },
                    "shutdown_cost_change_pct": shutdowns
                        .iter()
                        .map(|sd| (sd.which.as_str(), sd.inventory_cost_change_pct))
                        .collect::<std::collections::BTreeMap<_, _>>(),
                    "centralization": {
                        "centralized_profit": central.centralized.flow_profit,
                        "decentralized_profit": central.decentralized.flow_profit,
                        "gain_pct": central.gain_pct,
                        "inv_cost_change_pct": central.inv_cost_change_pct,
                    },
                    "cost_to_revenue": {
                        "holding": ratios.holding,
                        "stockout": ratios.stockout,
                        "fixed": ratios.fixed,
                        "variable": ratios.variable,
                        "total": ratios.total,
                    },
                });
                art.write_json(&format!("details/unit_{s}_{p}.json"), &detail)?;
            }
            Err(e) => log_info(&format!("counterfact: unit ({s},{p}) skipped: {e}")),
        }
    }
    if n_ok == 0 {
        bail!("no unit produced counterfactual results");
    }

    let mean_sd = |vals: &[f64]| -> (f64, f64) {
        (stats::mean(vals), stats::variance_sample(vals).sqrt())
    };
    let mut shutdown_lines = Vec::new();
    {
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|j| factuals.iter().map(|r| r[j]).collect())
            .collect();
        let mut line = "none".to_string();
        for c in &cols {
            let (m, s) = mean_sd(c);
            line.push_str(&format!(",{m},{s}"));
        }
        line.push_str(",0,0");
        shutdown_lines.push(line);
    }
    for which in ShutdownComponent::ALL_RUNS {
        if let Some(rows) = per_component.get(which.as_str()) {
            let mut line = which.as_str().to_string();
            for j in 0..6 {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let (m, s) = mean_sd(&col);
                line.push_str(&format!(",{m},{s}"));
            }
            shutdown_lines.push(line);
        }
    }
    art.write_csv(
        "shutdown.csv",
        "component,stockout_freq_mean,stockout_freq_sd,ordering_freq_mean,ordering_freq_sd,\
inv_to_sales_mean,inv_to_sales_sd,inv_to_sales_after_mean,inv_to_sales_after_sd,\
inv_to_sales_before_mean,inv_to_sales_before_sd,inv_cost_change_pct_mean,inv_cost_change_pct_sd",
        &shutdown_lines,
    )?;

    let central_names = [
        "centralized_profit",
        "decentralized_profit",
        "gain_abs",
        "gain_pct",
        "inv_cost_change_pct",
    ];
    let mut central_lines = Vec::new();
    for (j, name) in central_names.iter().enumerate() {
        let col: Vec<f64> = central_rows.iter().map(|r| r[j]).collect();
        central_lines.push(format!(
            "{name},{},{},{},{},{},{}",
            stats::mean(&col),
            stats::quantile(&col, 0.10),
            stats::quantile(&col, 0.25),
            stats::median(&col),
            stats::quantile(&col, 0.75),
            stats::quantile(&col, 0.90),
        ));
    }
    art.write_csv(
        "centralization.csv",
        "metric,mean,p10,p25,median,p75,p90",
        &central_lines,
    )?;

    let ratio_names = ["holding", "stockout", "fixed", "variable", "total"];
    let mut ratio_lines = Vec::new();
    for (j, name) in ratio_names.iter().enumerate() {
        let col: Vec<f64> = ratio_rows.iter().map(|r| r[j]).collect();
        ratio_lines.push(format!(
            "{name},{},{}",
            stats::median(&col),
            stats::variance_sample(&col).sqrt()
        ));
    }
    art.write_csv(
        "cost_ratios.csv",
        "component,median_ratio,sd_ratio",
        &ratio_lines,
    )?;
    log_info(&format!("counterfact: {n_ok} units evaluated"));
    Ok(())
}

pub fn report(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = ArtifactSet::new(out, &cfg.hash(), cfg.seed)?;
    let r = report_body(cfg, out, &mut art);
    if r.is_err() {
        art.remove_partial();
    }
    r
}

fn read_numeric_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| anyhow!("empty csv"))?;
    let idx = header
        .split(',')
        .position(|h| h == column)
        .ok_or_else(|| anyhow!("column {column} not found"))?;
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: &str = line.split(',').nth(idx).unwrap_or("");
        if let Ok(x) = v.parse::<f64>() {
            if x.is_finite() {
                out.push(x);
            }
        }
    }
    Ok(out)
}

fn read_structural_param(path: &Path, param: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 4 && f[2] == param {
            if let Ok(x) = f[3].parse::<f64>() {
                if x.is_finite() {
                    out.push(x);
                }
            }
        }
    }
    Ok(out)
}

fn report_body(cfg: &RunConfig, out: &Path, art: &mut ArtifactSet) -> Result<()> {
    let _ = cfg;
    let mut metrics: Vec<(String, Vec<f64>)> = Vec::new();
    let sf = out.join("structural_fits.csv");
    if sf.exists() {
        for p in ["gamma_h", "gamma_z", "gamma_f", "gamma_c"] {
            metrics.push((format!("structural.{p}"), read_structural_param(&sf, p)?));
        }
    }
    let ss = out.join("ss_fits.csv");
    if ss.exists() {
        for c in ["bk_s", "bd_s", "log_s0", "log_s_upper0"] {
            metrics.push((format!("ss.{c}"), read_numeric_column(&ss, c)?));
        }
    }
    let dm = out.join("demand_fits.csv");
    if dm.exists() {
        for c in ["eta_p", "eta_q", "alpha", "pseudo_r2"] {
            metrics.push((format!("demand.{c}"), read_numeric_column(&dm, c)?));
        }
    }
    if metrics.is_empty() {
        bail!("no fit artifacts found in {}", out.display());
    }

    let mut lines = Vec::new();
    for (name, vals) in &metrics {
        if vals.is_empty() {
            continue;
        }
        lines.push(format!(
            "{name},{},{},{},{},{},{},{},{}",
            vals.len(),
            stats::mean(vals),
            stats::variance_sample(vals).sqrt(),
            stats::quantile(vals, 0.10),
            stats::quantile(vals, 0.25),
            stats::median(vals),
            stats::quantile(vals, 0.75),
            stats::quantile(vals, 0.90),
        ));
    }
    art.write_csv(
        "report.csv",
        "metric,n,mean,sd,p10,p25,median,p75,p90",
        &lines,
    )?;

    // Plot-ready inverse CDFs: sorted values with their plotting positions.
    for (name, vals) in &metrics {
        if vals.is_empty() {
            continue;
        }
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let rows: Vec<String> = sorted
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{},{},{}", i + 1, (i as f64 + 1.0) / n as f64, v))
            .collect();
        let fname = format!("invcdf_{}.csv", name.replace('.', "_"));
        art.write_csv(&fname, "rank,p,value", &rows)?;
    }
    log_info(&format!("report: wrote {} metric summaries", lines.len()));
    Ok(())
}

/// Used by tests: planted chain truth as estimates (bypasses estimation).
pub fn planted_estimates(spec: &ChainSpec, seed: u64) -> Result<Vec<GammaEstimate>> {
    Ok(planted_gammas(spec, seed)?
        .into_iter()
        .map(|t| GammaEstimate {
            store_id: t.store_id,
            product_id: t.product_id,
            gamma: t.total(),
        })
        .collect())
}
