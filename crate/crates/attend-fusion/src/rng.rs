//! Deterministic, fully specified random number generation.
//!
//! Everything random in this crate — weight initialization, synthetic data,
//! shuffles, splits — flows through [`Rng`], an in-repo xoshiro256** generator
//! seeded via SplitMix64. The platform RNG is never used, so byte streams are
//! reproducible from a `u64` seed on any machine.
//!
//! Independent streams are derived with [`derive_seed`], which mixes a parent
//! seed with a stream tag through SplitMix64. The derivation is pure, so
//! callers can name their streams with stable constants.

/// One SplitMix64 step: advances `state` and returns the next output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut s = stream;
    let mixed = splitmix64(&mut s);
    let mut t = seed ^ mixed;
    splitmix64(&mut t)
}

/// xoshiro256** generator with Box-Muller gaussian sampling.
///
/// The gaussian path draws two uniforms per pair, returns the cosine branch
/// first and caches the sine branch for the next call. The cache is part of
/// the generator state, so clones and reseeds behave deterministically.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl Rng {
    /// Builds a generator whose state is filled by four SplitMix64 outputs.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        // xoshiro forbids the all-zero state.
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        Rng {
            s,
            spare_normal: None,
        }
    }

    /// Generator for an independent named stream of `seed`; streams with
    /// different ids never share state.
    pub fn stream(seed: u64, stream: u64) -> Rng {
        Rng::from_seed(derive_seed(seed, stream))
    }

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

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }

    /// Unbiased integer in `[0, bound)` via Lemire's widening-multiply method.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0) is undefined");
        let mut x = self.next_u64();
        let mut m = (x as u128) * (bound as u128);
        let mut low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            while low < threshold {
                x = self.next_u64();
                m = (x as u128) * (bound as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Standard normal via Box-Muller. Draw order: u1 then u2; the cosine
    /// branch is returned first, the sine branch on the following call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Poisson sample by Knuth's product-of-uniforms method; fine for small means.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        assert!(mean > 0.0 && mean.is_finite());
        let limit = (-mean).exp();
        let mut count = 0u64;
        let mut product = 1.0;
        loop {
            product *= self.unit();
            if product <= limit {
                return count;
            }
            count += 1;
        }
    }

    /// In-place Fisher-Yates shuffle, iterating from the last index down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below((i + 1) as u64) as usize;
            items.swap(i, j);
        }
    }

    /// `count` distinct values from `[0, bound)`, in draw order.
    pub fn sample_distinct(&mut self, bound: usize, count: usize) -> Vec<usize> {
        assert!(count <= bound);
        let mut pool: Vec<usize> = (0..bound).collect();
        for i in 0..count {
            let j = i + self.below((bound - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}
