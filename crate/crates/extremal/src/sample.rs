//! Deterministic sample generation.
//!
//! Reports must be byte-identical for a fixed seed, so all sampling is
//! done with either a Halton low-discrepancy sequence (grids over
//! boxes) or a splitmix64 stream (independent draws). No global state,
//! no platform dependence.

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical-inverse of `index` in base `base`, in (0, 1).
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut result = 0.0;
    while index > 0 {
        result += (index % base) as f64 * inv;
        index /= base;
        inv /= base as f64;
    }
    result
}

/// `count` Halton points in the box `[-half_width, half_width]^dim`.
///
/// The seed offsets the start index of the sequence, so distinct seeds
/// give distinct but individually reproducible grids.
pub fn halton_box(dim: usize, count: usize, half_width: f64, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "sampling supports up to 16 dimensions");
    (0..count)
        .map(|i| {
            let index = seed.wrapping_add(i as u64).wrapping_add(1);
            (0..dim)
                .map(|d| (2.0 * radical_inverse(index, PRIMES[d]) - 1.0) * half_width)
                .collect()
        })
        .collect()
}

/// Minimal splitmix64 stream for reproducible pseudo-random draws.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
