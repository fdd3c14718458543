//! Counter-based SplitMix64.
//!
//! Every draw is a pure function of `(key, counter)`: the key is
//! `mix64(seed)` (optionally re-keyed with [`CounterRng::substream`]) and the
//! output for counter `c` is `mix64(key + (c + 1) * 0x9E3779B97F4A7C15)`,
//! wrapping. This is exactly the SplitMix64 sequence started at `key`, so any
//! language with 64-bit wrapping arithmetic reproduces the stream, and draws
//! can be generated in any order or in parallel.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to turn string identifiers into substream ids.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed) }
    }

    /// Independent stream keyed by `(self, id)`.
    pub fn substream(&self, id: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(id.wrapping_add(GOLDEN_GAMMA))),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        (self.u64_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Index in `0..n` by multiply-shift.
    #[inline]
    pub fn index_at(&self, counter: u64, n: usize) -> usize {
        ((u128::from(self.u64_at(counter)) * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller on counters `2c` and `2c + 1`.
    #[inline]
    pub fn normal_at(&self, counter: u64) -> f64 {
        let u1 = 1.0 - self.uniform_at(counter.wrapping_mul(2));
        let u2 = self.uniform_at(counter.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
