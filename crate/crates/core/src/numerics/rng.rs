//! Seeded xorshift64* PRNG.
//!
//! Every stochastic choice in the pipeline draws from one of these, derived
//! from the run seed plus a purpose tag, so independent work items (scenes,
//! per-object trainings) own independent streams and the whole pipeline stays
//! reproducible no matter how work is scheduled.

/// splitmix64 step; used for seeding and stream derivation.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; stable tag hashing for stream derivation.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// xorshift64* generator. `derive` carves out independent child streams.
#[derive(Clone, Debug)]
pub struct Rng64 {
    seed: u64,
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        // splitmix the raw seed so nearby seeds give unrelated streams and the
        // all-zero state (illegal for xorshift) can never occur.
        let mut s = seed;
        let mut state = splitmix64(&mut s);
        if state == 0 {
            state = 0x9e37_79b9_7f4a_7c15;
        }
        Rng64 { seed, state }
    }

    /// A child stream determined by (root seed, tag, ids) only — independent
    /// of how much this generator has already been used.
    pub fn derive(&self, tag: &str, ids: &[u64]) -> Rng64 {
        let mut mix = self.seed ^ fnv1a(tag.as_bytes());
        for &id in ids {
            mix = splitmix64(&mut mix) ^ id;
        }
        Rng64::new(splitmix64(&mut mix))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is negligible for our n (<< 2^32) but
        // keep the widening form anyway since it costs nothing.
        let x = self.next_u64();
        ((x as u128 * n as u128) >> 64) as usize
    }

    /// True with probability p.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Pick one element by reference.
    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}
