//! Deterministic counter-based pseudo-random number generator.
//!
//! A splitmix64 stream indexed by `(seed, counter)` plus a Box-Muller
//! transform for standard-normal draws. Identical seed and call sequence
//! produce an identical stream, and the full state is three words, so it
//! serializes exactly into checkpoints.

use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq)]
pub struct Rng {
    seed: u64,
    counter: u64,
    /// Box-Muller produces normals in pairs; the unused half is cached.
    cached_normal: Option<f64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG53: f64 = 1.0 / 9_007_199_254_740_992.0;

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            counter: 0,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)` via the widening-multiply reduction.
    pub fn index_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// One standard-normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        // u1 in (0, 1] so ln(u1) is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG53;
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = TAU * u2;
        self.cached_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index_below(i + 1);
            items.swap(i, j);
        }
    }

    /// Serializable state: `(seed, counter, cached_normal)`.
    pub fn state(&self) -> (u64, u64, Option<f64>) {
        (self.seed, self.counter, self.cached_normal)
    }

    pub fn from_state(seed: u64, counter: u64, cached_normal: Option<f64>) -> Self {
        Rng {
            seed,
            counter,
            cached_normal,
        }
    }
}

/// `d` i.i.d. draws from N(0, 1); deterministic given the generator state.
pub fn sample_standard_normal(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.standard_normal()).collect()
}
