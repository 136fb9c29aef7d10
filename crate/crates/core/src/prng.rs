//! Seed-reproducible random streams and the weight/score initializers.
//!
//! The generator is xoshiro256** (Blackman & Vigna). A stream's 256-bit state
//! is filled from a splitmix64 sequence whose starting value is a mix of the
//! seed and every derivation tag, in order. Normal variates come from the
//! Box–Muller transform; the second variate of each pair is cached. Nothing
//! here depends on the platform or on a third-party generator, so a server
//! and its clients rebuild identical tensors from the same seed.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};
use crate::matrix::Matrix;

pub const ALGORITHM_ID: &str = "xoshiro256**/splitmix64";

/// Derivation tag of the weight stream.
pub const TAG_WEIGHTS: u64 = 0;
/// Derivation tag of the score stream.
pub const TAG_SCORES: u64 = 1;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    mix64(*state)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    s: [u64; 4],
    spare_normal: Option<u64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, &[])
    }

    /// Builds a stream that depends only on `seed` and the ordered `tags`.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mut h = mix64(seed ^ 0x5851_f42d_4c95_7f2d);
        for &t in tags {
            h = mix64(h.rotate_left(23) ^ mix64(t.wrapping_add(GOLDEN_GAMMA)));
        }
        let mut sm = h;
        let mut s = [0u64; 4];
        for w in &mut s {
            *w = splitmix64(&mut sm);
        }
        // xoshiro must never start from the all-zero state.
        if s == [0; 4] {
            s[0] = GOLDEN_GAMMA;
        }
        Self {
            s,
            spare_normal: None,
        }
    }

    /// Child stream keyed by this stream's next output and `tags`.
    pub fn fork(&mut self, tags: &[u64]) -> Self {
        let base = self.next();
        Self::derive(base, tags)
    }

    pub fn algorithm_id(&self) -> &'static str {
        ALGORITHM_ID
    }

    #[inline]
    fn next(&mut self) -> u64 {
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
    pub fn next_f64(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal variate (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(bits) = self.spare_normal.take() {
            return f64::from_bits(bits);
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some((r * theta.sin()).to_bits());
        r * theta.cos()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection.
        let mut m = (self.next() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `count` distinct values from `0..n`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Weight initializer families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GlorotNormal,
    KaimingNormal,
    SignedKaimingConstant,
    KaimingUniform,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::GlorotNormal => "glorot_normal",
            InitKind::KaimingNormal => "kaiming_normal",
            InitKind::SignedKaimingConstant => "signed_kaiming_constant",
            InitKind::KaimingUniform => "kaiming_uniform",
        }
    }
}

/// Fills a `(fan_out, fan_in)` matrix from `rng` according to `kind`.
pub fn init_weights(
    fan_out: usize,
    fan_in: usize,
    kind: InitKind,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(FslError::ZeroFan { fan_out, fan_in });
    }
    let n = fan_in * fan_out;
    let fi = fan_in as f64;
    let data: Vec<f32> = match kind {
        InitKind::GlorotNormal => {
            let std = (2.0 / (fi + fan_out as f64)).sqrt();
            (0..n).map(|_| (rng.normal() * std) as f32).collect()
        }
        InitKind::KaimingNormal => {
            let std = (2.0 / fi).sqrt();
            (0..n).map(|_| (rng.normal() * std) as f32).collect()
        }
        InitKind::SignedKaimingConstant => {
            let sigma = (2.0 / fi).sqrt() as f32;
            (0..n)
                .map(|_| if rng.next() >> 63 == 0 { sigma } else { -sigma })
                .collect()
        }
        InitKind::KaimingUniform => {
            let bound = (6.0 / fi).sqrt();
            (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
        }
    };
    Matrix::from_vec(fan_out, fan_in, data)
}

/// Score initializer: Kaiming-uniform.
pub fn init_scores(fan_out: usize, fan_in: usize, rng: &mut RngStream) -> Result<Matrix> {
    init_weights(fan_out, fan_in, InitKind::KaimingUniform, rng)
}

/// The protocol seed is 32 bits wide; streams take the zero-extended value.
pub fn widen_seed(seed: u32) -> u64 {
    u64::from(seed)
}
