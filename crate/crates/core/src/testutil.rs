//! Toy-model builders shared by the unit tests.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dp::DiscreteModel;
use crate::rng::stream_rng;
use crate::types::StructuralParams;

/// Random dense model with `n` states and `ny` actions; payoffs live in the
/// revenue feature column so that gamma = (1, 0, 0, 0, 0) / sigma picks them
/// up unchanged.
pub fn toy_model(n: usize, ny: usize, seed: u64, payoff_scale: f64) -> DiscreteModel {
    let mut rng = stream_rng(seed, 0, 0, 0x746f79);
    let mut f_mats = Vec::with_capacity(ny);
    let mut h_mats = Vec::with_capacity(ny);
    for _ in 0..ny {
        let mut f = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            for (c, v) in row.into_iter().enumerate() {
                f[(x, c)] = v;
            }
        }
        let mut h = DMatrix::<f64>::zeros(n, 5);
        for x in 0..n {
            h[(x, 0)] = payoff_scale * (rng.gen::<f64>() - 0.5);
        }
        f_mats.push(f);
        h_mats.push(h);
    }
    DiscreteModel::raw(f_mats, h_mats).unwrap()
}

/// Zero-cost parameter vector at unit shock scale.
pub fn plain_params(beta: f64) -> StructuralParams {
    StructuralParams::new(0.0, 0.0, 0.0, 0.0, 1.0, beta).unwrap()
}
