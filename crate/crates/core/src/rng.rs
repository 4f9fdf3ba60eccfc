//! SplitMix64, the one source of randomness in the simulator.
//!
//! Constants follow Steele, Lea and Flood's SplitMix64:
//!
//! ```text
//! state = state + 0x9E37_79B9_7F4A_7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! out = z ^ (z >> 31)
//! ```
//!
//! The load balancer uses the top 16 bits of each output as its draw, so any
//! reimplementation seeded identically makes the same harvesting choices.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Top 16 bits of the next output.
    pub fn next_u16(&mut self) -> u16 {
        (self.next_u64() >> 48) as u16
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        // Lemire's multiply-shift; the bias is below 2^-64 * bound.
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Derive an independent stream for a named sub-component.
    pub fn fork(&self, salt: u64) -> Self {
        let mut mixer = SplitMix64::new(self.state ^ salt.wrapping_mul(0xA076_1D64_78BD_642F));
        Self::new(mixer.next_u64())
    }
}
