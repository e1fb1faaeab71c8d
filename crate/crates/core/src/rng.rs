//! Deterministic RNG streams keyed by (seed, store, product) so that parallel
//! simulation order never changes the draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; mixes the key components into one stream seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// RNG stream for one (store, product) unit; `salt` separates phases
/// (pilot simulation, final simulation, noise draws, ...).
pub fn stream_rng(seed: u64, store: u32, product: u32, salt: u64) -> ChaCha8Rng {
    let key = mix(seed)
        ^ mix((store as u64) << 32 | product as u64).rotate_left(17)
        ^ mix(salt).rotate_left(41);
    ChaCha8Rng::seed_from_u64(key)
}

/// Standard extreme-value type 1 draw via inverse cdf: -ln(-ln(u)).
pub fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(1e-300, 1.0 - 1e-16);
    -(-u.ln()).ln()
}

/// Standard normal draw (Box-Muller).
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().clamp(1e-300, 1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
