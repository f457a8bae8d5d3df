use crate::error::{Error, Result};

/// xorshift64* generator. This is the only source of randomness in the
/// crate: parameter init, shuffles, and dropout masks all draw from it,
/// which makes every run a pure function of the configured seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    /// A zero seed would lock the generator at zero forever, so it is
    /// rejected rather than remapped.
    pub fn new(seed: u64) -> Result<Self> {
        if seed == 0 {
            return Err(Error::Config("prng seed must be nonzero".into()));
        }
        Ok(Prng { state: seed })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Restore a generator mid-stream (checkpoint resume).
    pub fn from_state(state: u64) -> Result<Self> {
        Self::new(state)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        self.state = s;
        s.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in [0, 1), 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in [0, bound) by modulo reduction.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }

    /// Standard normal via Box–Muller. Exactly two uniform draws per call,
    /// no cached spare, so the draw count is predictable.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
