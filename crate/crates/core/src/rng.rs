//! Counter-based random streams.
//!
//! Every stream is a pure function of `(master seed, step, purpose, index)`,
//! so draws never depend on which worker touches a cell or in which order.

/// What a stream is used for. Distinct purposes never share a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Placement = 1,
    InitGenome = 2,
    Radiation = 3,
    Brush = 4,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic stream keyed by its derivation tuple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn derive(seed: u64, step: u64, purpose: Purpose, index: u64) -> Self {
        let mut k = mix(seed.wrapping_add(GOLDEN));
        k = mix(k ^ step.wrapping_mul(GOLDEN));
        k = mix(k ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        k = mix(k ^ index.wrapping_add(GOLDEN).wrapping_mul(0xA076_1D64_78BD_642F));
        Self { key: k, counter: 0 }
    }

    /// Standalone stream, handy for tests and tools.
    pub fn from_seed(seed: u64) -> Self {
        Self::derive(seed, 0, Purpose::InitGenome, 0)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the bias is below 2^-64 · n, irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller (one draw per call, the sine half is discarded).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
