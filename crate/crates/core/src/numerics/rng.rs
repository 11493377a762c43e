//! Deterministic random stream.
//!
//! SplitMix64 core: one 64-bit state word advanced by a fixed increment and
//! scrambled by two xor-shift multiplies. The sequence is a pure function of
//! the seed, identical on every platform, and each draw consumes exactly one
//! state step, which lets callers document draw budgets precisely:
//!
//! - `next_f64`: one draw, uniform on [0,1) with 53 random bits;
//! - `normal`: exactly two draws (Box-Muller, cosine branch only).

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next raw draw (SplitMix64 output function).
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on [0,1), one draw.
    pub fn next_f64(&mut self) -> f64 {
        // Top 53 bits scaled by 2^-53.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller, exactly two draws.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0,1]: ln stays finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Deterministic child stream for parallel work.
    ///
    /// The child seed is a pure function of (parent seed, index); it does not
    /// depend on how far the parent has been consumed, so `substream(i)` can
    /// be handed to worker `i` regardless of evaluation order.
    pub fn substream(&self, index: u64) -> RngStream {
        let mut mixer = RngStream::new(self.seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        let child = mixer.next_u64();
        RngStream::new(child)
    }
}
