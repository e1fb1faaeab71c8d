//! Synthetic multi-store chain: store and manager covariates, planted
//! store-component costs (a linear function of store characteristics plus
//! product effects) and manager-component costs (zero-mean draws whose scale
//! rises for low-education, low-experience profiles).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, stream_rng};
use crate::sim::{simulate_panel_with_model, AgentModel, PriceProcess, SimSettings};
use crate::types::{DemandParams, MarkupClass, PanelRow, StructuralParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreClass {
    AAA,
    AA,
    A,
    B,
    C,
    D,
}

impl StoreClass {
    pub const ALL: [StoreClass; 6] = [
        StoreClass::AAA,
        StoreClass::AA,
        StoreClass::A,
        StoreClass::B,
        StoreClass::C,
        StoreClass::D,
    ];

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StoreClass::AAA => "AAA",
            StoreClass::AA => "AA",
            StoreClass::A => "A",
            StoreClass::B => "B",
            StoreClass::C => "C",
            StoreClass::D => "D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Education {
    HighSchool,
    College,
    University,
}

impl Education {
    pub fn as_str(&self) -> &'static str {
        match self {
            Education::HighSchool => "high_school",
            Education::College => "college",
            Education::University => "university",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreSpec {
    pub store_id: u32,
    pub class: StoreClass,
    pub log_assortment: f64,
    pub log_population: f64,
    pub log_income: f64,
    pub region: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManagerSpec {
    pub store_id: u32,
    pub education: Education,
    pub years_lcbo: f64,
    pub years_other: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductSpec {
    pub product_id: u32,
    pub price: PriceProcess,
    pub markup: f64,
    pub demand: DemandParams,
}

/// Linear map from store covariates to the store cost component, one row per
/// cost parameter (gamma_h, gamma_z, gamma_f, gamma_c).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedEffects {
    pub base: [f64; 4],
    /// Additive shift per store class (indexed AAA..D).
    pub class_shift: [[f64; 6]; 4],
    pub coef_assortment: [f64; 4],
    pub coef_population: [f64; 4],
    pub coef_income: [f64; 4],
    /// Additive product effect, one row per product.
    pub product_shift: Vec<[f64; 4]>,
}

/// Covariate reference points; the planted linear function is evaluated in
/// deviations from these so that `base` pins the level.
const REF_LOG_ASSORTMENT: f64 = 7.6;
const REF_LOG_POPULATION: f64 = 11.0;
const REF_LOG_INCOME: f64 = 10.5;

impl PlantedEffects {
    pub fn default_for(n_products: usize) -> Self {
        let mut product_shift = vec![[0.0; 4]];
        for j in 1..n_products {
            let s = j as f64;
            product_shift.push([0.0004 * s, 0.004 * s, 0.25 * s, 0.004 * s]);
        }
        PlantedEffects {
            base: [0.0036, 0.0219, 2.9658, 0.0341],
            class_shift: [
                [0.0015, 0.0012, 0.0007, 0.0, -0.0008, -0.0014],
                [0.004, 0.003, 0.002, 0.0, -0.004, -0.006],
                [-0.55, -0.45, -0.25, 0.0, 0.45, 0.8],
                [0.004, 0.003, 0.002, 0.0, -0.003, -0.005],
            ],
            coef_assortment: [0.0006, -0.004, -0.30, 0.003],
            coef_population: [-0.0002, -0.001, 0.02, 0.001],
            coef_income: [0.0003, 0.02, -0.05, 0.004],
            product_shift,
        }
    }

    pub fn store_component(&self, store: &StoreSpec, product_idx: usize) -> [f64; 4] {
        let mut out = [0.0; 4];
        let da = store.log_assortment - REF_LOG_ASSORTMENT;
        let dp = store.log_population - REF_LOG_POPULATION;
        let di = store.log_income - REF_LOG_INCOME;
        for p in 0..4 {
            out[p] = self.base[p]
                + self.class_shift[p][store.class.index()]
                + self.coef_assortment[p] * da
                + self.coef_population[p] * dp
                + self.coef_income[p] * di
                + self.product_shift[product_idx.min(self.product_shift.len() - 1)][p];
        }
        out
    }
}

/// Scale of the zero-mean manager component per cost parameter, inflated for
/// low-education and low-experience profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManagerNoise {
    pub base_scale: [f64; 4],
    pub education_gradient: f64,
    pub experience_gradient: f64,
}

impl Default for ManagerNoise {
    fn default() -> Self {
        ManagerNoise {
            base_scale: [0.0012, 0.06, 0.85, 0.011],
            education_gradient: 0.8,
            experience_gradient: 0.6,
        }
    }
}

impl ManagerNoise {
    pub fn profile_multiplier(&self, manager: &ManagerSpec) -> f64 {
        let edu = match manager.education {
            Education::HighSchool => 1.0,
            Education::College => 0.5,
            Education::University => 0.0,
        };
        let exp = 1.0 / (1.0 + manager.years_lcbo / 8.0);
        1.0 + self.education_gradient * edu + self.experience_gradient * exp
    }

    pub fn scale_for(&self, manager: &ManagerSpec) -> [f64; 4] {
        let m = self.profile_multiplier(manager);
        [
            self.base_scale[0] * m,
            self.base_scale[1] * m,
            self.base_scale[2] * m,
            self.base_scale[3] * m,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n_days: u32,
    pub stores: Vec<StoreSpec>,
    pub managers: Vec<ManagerSpec>,
    pub products: Vec<ProductSpec>,
    pub planted: PlantedEffects,
    pub noise: ManagerNoise,
    pub sigma_eps: f64,
    pub beta: f64,
    pub settings: SimSettings,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_days < 30 {
            return Err(Error::ChainSpec("n_days must be at least 30".into()));
        }
        if self.stores.is_empty() || self.products.is_empty() {
            return Err(Error::ChainSpec("need at least one store and product".into()));
        }
        if self.managers.len() != self.stores.len() {
            return Err(Error::ChainSpec("one manager per store required".into()));
        }
        for (j, store) in self.stores.iter().enumerate() {
            for p_idx in 0..self.products.len() {
                let sto = self.planted.store_component(store, p_idx);
                for (name, v) in [("gamma_h", sto[0]), ("gamma_f", sto[2]), ("gamma_c", sto[3])] {
                    if v < 0.0 {
                        return Err(Error::ChainSpec(format!(
                            "store {j} product {p_idx}: planted {name} = {v} < 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Generates a chain with covariates drawn from class-typical ranges.
    pub fn synthetic(n_stores: u32, n_products: u32, n_days: u32, seed: u64) -> Self {
        let mut rng = stream_rng(seed, u32::MAX, 0, 0x636861696e);
        // Class frequencies roughly matching a large retail chain.
        let class_weights = [0.008, 0.04, 0.233, 0.247, 0.259, 0.213];
        let class_log_assort = [8.7, 8.4, 8.1, 7.6, 7.0, 6.6];
        let mut stores = Vec::with_capacity(n_stores as usize);
        let mut managers = Vec::with_capacity(n_stores as usize);
        for i in 0..n_stores {
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut class = StoreClass::D;
            for (ci, w) in class_weights.iter().enumerate() {
                cum += w;
                if u <= cum {
                    class = StoreClass::ALL[ci];
                    break;
                }
            }
            stores.push(StoreSpec {
                store_id: i,
                class,
                log_assortment: class_log_assort[class.index()] + 0.15 * normal(&mut rng),
                log_population: 11.0 + 0.8 * normal(&mut rng),
                log_income: 10.5 + 0.25 * normal(&mut rng),
                region: rng.gen_range(0..4),
            });
            let eu: f64 = rng.gen();
            let education = if eu < 0.09 {
                Education::HighSchool
            } else if eu < 0.49 {
                Education::College
            } else {
                Education::University
            };
            managers.push(ManagerSpec {
                store_id: i,
                education,
                years_lcbo: (3.0 + (10.0 + 6.0 * normal(&mut rng)).abs()).min(40.0),
                years_other: (6.0 * rng.gen::<f64>() * 2.0).min(25.0),
            });
        }

        let mut products = Vec::with_capacity(n_products as usize);
        for j in 0..n_products {
            // Alternate a spirits-like and a wine-like product.
            let (levels, markup, intercept, alpha) = if j % 2 == 0 {
                (vec![24.30, 25.28], 0.655, 2.27, 0.33)
            } else {
                (vec![9.48, 9.98], 0.715, 1.72, 0.70)
            };
            products.push(ProductSpec {
                product_id: j,
                price: PriceProcess {
                    levels,
                    switch_prob: 0.03,
                },
                markup,
                demand: DemandParams {
                    eta0_weekend: 0.15,
                    eta0_holiday: 0.3,
                    eta0_intercept: intercept,
                    eta_p: -0.62,
                    eta_q: 0.52,
                    alpha,
                },
            });
        }

        ChainSpec {
            n_days,
            stores,
            managers,
            products,
            planted: PlantedEffects::default_for(n_products as usize),
            noise: ManagerNoise::default(),
            sigma_eps: 1.0,
            beta: crate::types::default_daily_beta(),
            settings: SimSettings::default(),
        }
    }
}

/// Planted truth for one store-product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRow {
    pub store_id: u32,
    pub product_id: u32,
    pub gamma_sto: [f64; 4],
    pub gamma_man: [f64; 4],
}

impl TruthRow {
    pub fn total(&self) -> [f64; 4] {
        [
            self.gamma_sto[0] + self.gamma_man[0],
            self.gamma_sto[1] + self.gamma_man[1],
            self.gamma_sto[2] + self.gamma_man[2],
            self.gamma_sto[3] + self.gamma_man[3],
        ]
    }
}

/// Draws the planted cost components for every store-product; panels are not
/// simulated. Draws are keyed by (seed, store, product) so the output does
/// not depend on iteration order.
pub fn planted_gammas(spec: &ChainSpec, seed: u64) -> Result<Vec<TruthRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.stores.len() * spec.products.len());
    for (s_idx, store) in spec.stores.iter().enumerate() {
        let manager = &spec.managers[s_idx];
        let scale = spec.noise.scale_for(manager);
        for (p_idx, product) in spec.products.iter().enumerate() {
            let gamma_sto = spec.planted.store_component(store, p_idx);
            let mut rng = stream_rng(seed, store.store_id, product.product_id, 0x67616d6d61);
            let mut gamma_man = [0.0; 4];
            let mut ok = false;
            for _try in 0..200 {
                for p in 0..4 {
                    gamma_man[p] = scale[p] * normal(&mut rng);
                }
                // Stockout term is sign-free; the priced resources are not.
                // The acceptance band is symmetric (|draw| <= store level) so
                // resampling leaves the draws exactly mean-zero.
                if gamma_sto[0] - gamma_man[0].abs() >= 0.0
                    && gamma_sto[2] - gamma_man[2].abs() >= 0.0
                    && gamma_sto[3] - gamma_man[3].abs() >= 0.0
                {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::ChainSpec(format!(
                    "store {} product {}: could not draw non-negative costs",
                    store.store_id, product.product_id
                )));
            }
            rows.push(TruthRow {
                store_id: store.store_id,
                product_id: product.product_id,
                gamma_sto,
                gamma_man,
            });
        }
    }
    Ok(rows)
}

/// One simulated store-product panel plus the behavioral model that made it.
pub struct UnitPanel {
    pub store_id: u32,
    pub product_id: u32,
    pub rows: Vec<PanelRow>,
    pub agent: AgentModel,
}

pub struct ChainData {
    pub truth: Vec<TruthRow>,
    pub panels: Vec<UnitPanel>,
}

/// Simulates the whole chain. Store-products run in parallel; the output is
/// sorted by (store, product) regardless of completion order.
pub fn synthesize_chain(spec: &ChainSpec, seed: u64) -> Result<ChainData> {
    let truth = planted_gammas(spec, seed)?;
    let mut jobs: Vec<(usize, &TruthRow)> = truth.iter().enumerate().collect();
    jobs.sort_by_key(|(_, t)| (t.store_id, t.product_id));

    let panels: Result<Vec<UnitPanel>> = jobs
        .par_iter()
        .map(|(_, t)| {
            let product = spec
                .products
                .iter()
                .find(|p| p.product_id == t.product_id)
                .ok_or_else(|| Error::ChainSpec("product id out of range".into()))?;
            let total = t.total();
            let params = StructuralParams::new(
                total[0],
                total[1],
                total[2],
                total[3],
                spec.sigma_eps,
                spec.beta,
            )?;
            let markup = MarkupClass::from_markup(product.markup)?;
            let agent = AgentModel::build(
                &params,
                &product.demand,
                &markup,
                &product.price,
                &spec.settings,
                seed,
                t.store_id,
                t.product_id,
            )?;
            let rows = simulate_panel_with_model(
                &agent,
                &product.demand,
                &product.price,
                spec.n_days,
                seed,
                &spec.settings,
                t.store_id,
                t.product_id,
            )?;
            Ok(UnitPanel {
                store_id: t.store_id,
                product_id: t.product_id,
                rows,
                agent,
            })
        })
        .collect();
    let mut panels = panels?;
    panels.sort_by_key(|u| (u.store_id, u.product_id));

    Ok(ChainData { truth, panels })
}
