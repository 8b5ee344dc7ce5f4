//! Counter-based deterministic random number generator.
//!
//! Every stochastic element of the crate (weight init, shuffles, dropout
//! masks, augmentation draws) pulls from an [`Rng`]. The generator is a keyed
//! SplitMix64-style mixer over an incrementing counter, so a draw is a pure
//! function of `(key, counter)`. Independent sub-streams are derived with
//! [`Rng::stream`]; nothing is shared between streams, which makes quantities
//! like "the augmentation applied to sample `i` in epoch `e`" pure functions
//! of `(seed, e, i)` regardless of batch composition or thread count.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_TWEAK: u64 = 0xA076_1D64_78BD_642F;
const STREAM_TWEAK: u64 = 0xE703_7ED1_A0B4_28DB;

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Deterministic, splittable random number generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    /// Creates a generator from a seed. Equal seeds give equal streams.
    pub fn new(seed: u64) -> Self {
        Rng {
            key: mix(seed ^ SEED_TWEAK),
            counter: 0,
        }
    }

    /// Derives an independent sub-stream. The result depends only on this
    /// generator's seed lineage and `index`, never on how many values have
    /// been drawn, so `stream` may be called at any time.
    pub fn stream(&self, index: u64) -> Rng {
        Rng {
            key: mix(self.key ^ mix(index.wrapping_mul(GOLDEN) ^ STREAM_TWEAK)),
            counter: 0,
        }
    }

    /// Next raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key ^ self.counter.wrapping_mul(GOLDEN))
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in `[0, 1)` with 24 random bits.
    #[inline]
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / 16_777_216.0)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero. The modulo bias is
    /// below 2^-59 for the small ranges used here (shuffles, pixel shifts).
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    #[inline]
    pub fn next_range(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.next_below((hi - lo + 1) as u64) as i64
    }

    /// Fair coin.
    #[inline]
    pub fn next_bool(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal draw via the Box-Muller transform (two uniforms per
    /// value, no cached state, so the draw count stays predictable).
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0, 1] keeps ln finite; u2 in [0, 1).
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle driven by this generator.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
