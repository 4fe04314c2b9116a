//! Deterministic random number generation.
//!
//! Every stochastic quantity in the engine is a pure function of a `u64`
//! seed. Streams are derived with a SplitMix64-style mix so that path `i`
//! of run `r` depends only on `(master_seed, r, i)` and never on the order
//! in which work is scheduled. Normal variates use the Marsaglia polar
//! method on top of ChaCha12; both choices are recorded in run manifests
//! so that results can be reproduced elsewhere.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// Identifier of the uniform bit stream, written into run manifests.
pub const RNG_ALGORITHM: &str = "chacha12";
/// Identifier of the normal sampling method, written into run manifests.
pub const NORMAL_METHOD: &str = "marsaglia-polar";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from `(master, index)`.
///
/// Counter-based: child `i` can be computed without generating children
/// `0..i`, which keeps parallel and serial path generation bit-identical.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Seeded uniform bit stream.
pub fn stream(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub fn uniform_unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unbiased uniform draw in `[0, bound)` (Lemire's multiply-shift method).
pub fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let wide = u128::from(rng.next_u64()) * u128::from(bound);
        if wide as u64 >= threshold {
            return (wide >> 64) as u64;
        }
    }
}

/// Standard normal source: ChaCha12 bits through the Marsaglia polar method.
///
/// The polar method produces variates in pairs; the spare is cached so a
/// stream of draws consumes the underlying bits deterministically.
#[derive(Debug, Clone)]
pub struct NormalSource {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl NormalSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed),
            spare: None,
        }
    }

    /// Next N(0, 1) variate.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * uniform_unit(&mut self.rng) - 1.0;
            let v = 2.0 * uniform_unit(&mut self.rng) - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }
}

/// Uniform random `n`-element subset of `{0, .., universe-1}`, sorted.
///
/// Partial Fisher-Yates over an index pool; the discarded ordering makes the
/// result uniform over subsets.
pub fn sample_subset(rng: &mut impl RngCore, n: usize, universe: usize) -> Vec<usize> {
    debug_assert!(n <= universe);
    let mut pool: Vec<usize> = (0..universe).collect();
    for i in 0..n {
        let j = i + uniform_below(rng, (universe - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool.sort_unstable();
    pool
}
