//! Deterministic seeded random streams.
//!
//! Everything stochastic in this crate (parameter init, corpus sampling,
//! epoch shuffling) draws from [`DetRng`], a splitmix64 generator whose
//! state is derived by hashing a seed together with a list of stream tags.
//! Streams keyed by distinct tags are independent, and the same
//! `(seed, tags)` pair reproduces the same sequence on every platform.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based deterministic generator (splitmix64).
#[derive(Clone, Debug)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            state: mix(seed.wrapping_add(GAMMA)),
        }
    }

    /// Derive an independent stream from a seed and a tag path,
    /// e.g. `derive(master, &[image_index, ref_index])`.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mut state = mix(seed.wrapping_add(GAMMA));
        for &tag in tags {
            state = mix(state ^ mix(tag.wrapping_add(GAMMA)));
        }
        DetRng { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        // 1 - u is in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Sample `count` distinct indices out of `0..n` (partial Fisher-Yates).
    pub fn distinct_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        let count = count.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}
