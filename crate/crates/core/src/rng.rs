//! Deterministic 64-bit PRNG used for corpus generation, parameter init and
//! shuffling. SplitMix64 with the standard constants; the whole pipeline is
//! reproducible from a single u64 seed on any platform because every random
//! decision routes through this integer generator.

/// SplitMix64 (Steele, Lea, Flood 2014). State advances by the golden-ratio
/// increment; output is the finalizer of the advanced state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

/// Golden-ratio state increment; also reused as the stride when deriving
/// independent seeds from a base seed.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_A: u64 = 0xBF58_476D_1CE4_B5B9;
const MIX_B: u64 = 0x94D0_49BB_1331_11EB;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Raw state, stored in checkpoints so a run's position in the stream is
    /// auditable.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn from_state(state: u64) -> Self {
        SplitMix64 { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX_A);
        z = (z ^ (z >> 27)).wrapping_mul(MIX_B);
        z ^ (z >> 31)
    }

    /// Uniform integer in [0, bound) via 128-bit multiply-shift. Biased by at
    /// most 2^-64, which is irrelevant here and keeps the draw count fixed.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below bound must be positive");
        let x = self.next_u64() as u128;
        ((x * bound as u128) >> 64) as u64
    }

    /// Uniform f64 in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Normal draw via Box-Muller; consumes exactly two outputs per call.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]: keeps ln finite
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle, descending index order.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Pick one element by reference.
    pub fn choose<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        assert!(!xs.is_empty(), "choose on empty slice");
        &xs[self.next_below(xs.len() as u64) as usize]
    }
}
