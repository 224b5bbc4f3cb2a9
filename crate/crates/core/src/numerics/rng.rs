//! Seeded random streams.
//!
//! Every stream is a ChaCha8 keystream. The 256-bit key is expanded from the
//! 64-bit seed with `SeedableRng::seed_from_u64` (PCG32 expansion, fixed by
//! `rand_core`), and the 64-bit ChaCha stream id selects an independent
//! keystream under that key. Distinct `(seed, stream)` pairs therefore never
//! share a block; each stream has 2^68 bytes before its counter wraps.
//!
//! Normal deviates use the Marsaglia polar method on 53-bit uniforms. The
//! second deviate of each accepted pair is cached, so the output is a pure
//! function of `(seed, stream)` and the call sequence.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Stream ids used across the crate. Keeping them in one place guarantees
/// that, for example, batch sampling is identical between a supervised run
/// and a Π-model run with the same seed.
pub mod streams {
    pub const TASK: u64 = 0;
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCHES: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const FROZEN_DRAWS: u64 = 5;
    pub const PROBE: u64 = 6;
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let scale = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * scale);
                return u * scale;
            }
        }
    }

    /// `n` i.i.d. standard normal draws.
    pub fn gaussian_vector(&mut self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::invalid("gaussian_vector needs n >= 1"));
        }
        Ok((0..n).map(|_| self.gaussian()).collect())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Random unit vector in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Result<Vec<f64>> {
        loop {
            let v = self.gaussian_vector(dim)?;
            let norm = super::linalg::norm(&v);
            if norm > 1e-12 {
                return Ok(v.into_iter().map(|x| x / norm).collect());
            }
        }
    }
}
