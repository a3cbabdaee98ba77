//! Seeded pseudo-random numbers for problem generation and sampling checks.
//!
//! The stream is ChaCha8 keyed by `seed_from_u64(seed)`; a uniform draw on
//! `[-1, 1]` takes the top 53 bits of one `u64` output, `u = 2 * (bits * 2^-53) - 1`.
//! Both steps are fixed here so instances can be reproduced outside Rust.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.symmetric())
    }

    /// Entries filled row by row.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.symmetric()).collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }
}
