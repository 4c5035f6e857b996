//! Reproducible per-scenario random streams.
//!
//! Each scenario draws from its own ChaCha8 stream: the key comes from the
//! 64-bit master seed and the stream id is the scenario index, so a scenario's
//! randomness does not depend on how scenarios are scheduled across threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng as ScenarioRng;

pub fn scenario_rng(master_seed: u64, scenario: u64) -> ScenarioRng {
    let mut rng = ScenarioRng::seed_from_u64(master_seed);
    rng.set_stream(scenario);
    rng
}

/// Uniform on `(0, 1]` with 53 random bits.
#[inline]
pub fn uniform_open<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential variate with the given positive rate, by inversion.
#[inline]
pub fn exponential<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -libm::log(uniform_open(rng)) / rate
}

/// Index `k` drawn with probability `weights[k] / sum(weights)`.
pub fn categorical<R: RngCore + ?Sized>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let target = uniform_open(rng) * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if target <= acc {
            return k;
        }
    }
    weights.len() - 1
}
