//! Splittable counter-based random number generator.
//!
//! Experiments here fan out over seeds, epochs, horizon steps, and design
//! rounds. Threading one sequential generator through that tree would make
//! every output depend on the exact evaluation order, so instead each
//! consumer derives an independent child stream with [`SplitRng::split`].
//! Child streams are keyed by `(parent key, label)`, which keeps outputs
//! byte-for-byte reproducible regardless of scheduling.
//!
//! The core primitive is the SplitMix64 output function: stream `i` of key
//! `k` is `mix64(k + i * GOLDEN)`. Splitting re-keys through the same mixer
//! with a distinct domain constant so child streams never collide with the
//! parent's own outputs.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_DOMAIN: u64 = 0x8f1b_bcdc_bfa5_3e0a;
const CHILD_DOMAIN: u64 = 0x2545_f491_4f6c_dd1d;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitRng {
    key: u64,
    counter: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng {
            key: mix64(seed ^ SEED_DOMAIN),
            counter: 0,
        }
    }

    /// Derive an independent child stream. Equal labels give equal children,
    /// so callers address subcomputations with stable labels rather than
    /// relying on call order.
    pub fn split(&self, label: u64) -> SplitRng {
        SplitRng {
            key: mix64(self.key ^ mix64(label.wrapping_mul(GOLDEN) ^ CHILD_DOMAIN)),
            counter: 0,
        }
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via Box-Muller. Consumes two uniforms.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Sample an index from an unnormalized nonnegative weight vector.
    /// Consumes exactly one uniform. Falls back to the last positive-weight
    /// index if rounding leaves the cursor past the end.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0, "categorical weights must have positive sum");
        let mut cursor = self.uniform() * total;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
                if cursor < w {
                    return i;
                }
                cursor -= w;
            }
        }
        last_positive
    }
}

impl RngCore for SplitRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(c.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
