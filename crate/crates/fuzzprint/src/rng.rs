//! Deterministic 64-bit random stream for mutation-based corpus generation.
//!
//! The algorithm is pinned so corpora are reproducible across runs,
//! platforms and reimplementations: xorshift64* with the shift triple
//! (12, 25, 27) and the multiplier 0x2545F4914F6CDD1D. A zero seed is
//! replaced by 0x9E3779B97F4A7C15 because the xorshift state must never
//! be zero.

const ZERO_SEED_REPLACEMENT: u64 = 0x9E37_79B9_7F4A_7C15;
const MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;

#[derive(Debug, Clone)]
pub struct DeterministicRng {
    state: u64,
}

impl DeterministicRng {
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { ZERO_SEED_REPLACEMENT } else { seed };
        DeterministicRng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state ^= self.state >> 12;
        self.state ^= self.state << 25;
        self.state ^= self.state >> 27;
        self.state.wrapping_mul(MULTIPLIER)
    }

    /// Uniform draw from `[0, bound)`. The modulo bias is irrelevant for
    /// fuzz-input selection and keeps the stream layout trivial to port.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() requires a positive bound");
        self.next_u64() % bound
    }
}
