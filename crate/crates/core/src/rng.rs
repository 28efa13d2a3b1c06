//! Deterministic seeded randomness.
//!
//! Every random choice in this crate flows through [`SplitMix64`] streams.
//! The generator, the uniform-real mapping, and the shuffle below are part of
//! the reproducibility contract: protected templates must be bit-identical
//! across runs, platforms, and thread counts, so each consumer derives its own
//! stream from an explicit seed instead of sharing sequential state.

/// SplitMix64 (Vigna). Fast, good bit diffusion, non-cryptographic.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix(self.state)
    }

    /// Uniform real in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform real in [lo, hi).
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in [0, n). `n` must be positive.
    ///
    /// Computed as `floor(u * n)` with a clamp against the (astronomically
    /// rare) case where rounding pushes `u * n` up to exactly `n`.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal deviate (Box-Muller, polar-free form).
    pub fn next_gaussian(&mut self) -> f64 {
        // next_f64 can return 0; shift into (0, 1] for the log.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    ///
    /// Pinned convention: for `i` from `len-1` down to `1`, draw `j =
    /// next_index(i + 1)` and swap `a[i]` with `a[j]`.
    pub fn shuffle<T>(&mut self, a: &mut [T]) {
        for i in (1..a.len()).rev() {
            let j = self.next_index(i + 1);
            a.swap(i, j);
        }
    }
}

/// The SplitMix64 finalizer as a standalone 64-bit mixer.
#[inline]
pub fn mix(z: u64) -> u64 {
    let mut z = z;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed, a domain tag, and an
/// index. Used to give parallel workers (per-sample renderers, per-system key
/// generators) their own streams with no shared sequential state.
#[inline]
pub fn derive_seed(parent: u64, domain: u64, index: u64) -> u64 {
    mix(mix(parent ^ domain).wrapping_add(index).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
