//! Seeded RNG with named sub-streams.
//!
//! xoshiro256** core seeded through splitmix64, so the same `(seed, stream_id)`
//! pair yields the same draw sequence on every platform. Distinct stream ids
//! give statistically independent streams off one master seed, which is how
//! the simulator hands out per-subsystem randomness (tokens, gate, experts,
//! hash functions) without the subsystems perturbing each other.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a fixed label.
///
/// Used by drivers that keep one master seed in their config and hand
/// labeled sub-seeds to each subsystem.
pub fn stream_seed(master: u64, label: u64) -> u64 {
    let mut s = master ^ label.wrapping_mul(GOLDEN);
    splitmix64(&mut s)
}

/// Deterministic RNG state for one `(seed, stream_id)` sub-stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    stream_id: u64,
    s: [u64; 4],
}

impl RngState {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut init = seed;
        let mut s = [
            splitmix64(&mut init),
            splitmix64(&mut init),
            splitmix64(&mut init),
            splitmix64(&mut init),
        ];
        let mut stream_init = stream_id ^ GOLDEN;
        for word in &mut s {
            *word ^= splitmix64(&mut stream_init);
        }
        // xoshiro locks up on the all-zero state.
        if s == [0; 4] {
            s[0] = GOLDEN;
        }
        RngState { seed, stream_id, s }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Next 64-bit value (xoshiro256**).
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[0, n)`.
    #[inline]
    pub fn next_range(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Modulo bias is irrelevant at the ranges used here (n << 2^64).
        self.next_u64() % n
    }

    /// Standard normal draw via the Marsaglia polar method.
    pub fn next_gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// A vector of standard normal draws.
    pub fn gaussian_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next_gaussian()).collect()
    }
}
