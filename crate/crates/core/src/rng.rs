//! Counter-based 64-bit generator used for every stochastic decision.
//!
//! The stream is fully determined by a 64-bit key and a 64-bit counter:
//!
//! ```text
//! word(key, n) = mix64(key + (n + 1) * 0x9E3779B97F4A7C15)      (wrapping)
//! mix64(z)     = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!                z ^= z >> 27; z *= 0x94D049BB133111EB;
//!                z ^ (z >> 31)
//! ```
//!
//! which is SplitMix64 evaluated at an arbitrary position. Probabilities are
//! compared as 53-bit integers (`word >> 11` against `floor(p * 2^53)`), so no
//! branch depends on platform floating point behaviour.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 finalisation round.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child key from a parent key and a stream label.
pub fn derive_key(parent: u64, label: u64) -> u64 {
    mix64(parent ^ mix64(label.wrapping_add(GAMMA)))
}

/// Number of distinct 53-bit draws.
pub const UNIT_SCALE: u64 = 1 << 53;

/// Converts a probability to the integer threshold used in draw comparisons.
pub fn probability_threshold(p: f64) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        UNIT_SCALE
    } else {
        // exact: scaling by a power of two
        (p * UNIT_SCALE as f64).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Random access into the stream without advancing.
    pub fn word_at(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        let w = self.word_at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        w
    }

    /// A 53-bit draw in `[0, 2^53)`.
    pub fn next_unit_bits(&mut self) -> u64 {
        self.next_u64() >> 11
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.next_unit_bits() as f64 / UNIT_SCALE as f64
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
