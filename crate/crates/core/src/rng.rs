//! Counter-based Gaussian streams.
//!
//! Every replicate owns a ChaCha20 stream selected by `(seed, replicate)`.
//! Each time step consumes a fixed number of 32-bit words, so the increment
//! of step `k` sits at a known word position and can be regenerated on its
//! own. Results never depend on which worker produced which replicate.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::paths::TimeGrid;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const INV_2_53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Standard normal draws via Box-Muller on a ChaCha20 stream.
///
/// Each pair of normals consumes exactly two `u64` words.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Two independent standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1] keeps the log finite
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * INV_2_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * INV_2_53;
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TWO_PI * u2).sin_cos();
        (radius * c, radius * s)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.normal_pair();
        self.spare = Some(b);
        a
    }

    fn seek_words(&mut self, word: u128) {
        self.spare = None;
        self.rng.set_word_pos(word);
    }
}

/// Source of the Brownian increments `dW_k`, `k = 0..n_main`, for one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrownianDriver {
    seed: u64,
    replicate: u64,
    h_bits: u64,
    n_main: usize,
}

impl BrownianDriver {
    pub fn new(seed: u64, replicate: u64, grid: &TimeGrid) -> Self {
        Self {
            seed,
            replicate,
            h_bits: grid.h().to_bits(),
            n_main: grid.n_main(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    fn h(&self) -> f64 {
        f64::from_bits(self.h_bits)
    }

    fn words_per_step(dim: usize) -> u128 {
        // two u64 (= four u32 words) per pair of normals
        4 * dim.div_ceil(2) as u128
    }

    fn fill_step(stream: &mut NormalStream, scale: f64, out: &mut [f64]) {
        for pair in out.chunks_mut(2) {
            let (a, b) = stream.normal_pair();
            pair[0] = scale * a;
            if pair.len() == 2 {
                pair[1] = scale * b;
            }
        }
    }

    /// All increments, flattened as `n_main x dim`; each is `N(0, h I)`.
    pub fn increments(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_main * dim];
        let mut stream = NormalStream::new(self.seed, self.replicate);
        let scale = self.h().sqrt();
        for step in out.chunks_mut(dim) {
            Self::fill_step(&mut stream, scale, step);
        }
        out
    }

    /// Increment of a single step, regenerated from its counter position.
    pub fn increment_at(&self, step: usize, dim: usize) -> Vec<f64> {
        assert!(step < self.n_main, "step {step} beyond the grid");
        let mut stream = NormalStream::new(self.seed, self.replicate);
        stream.seek_words(step as u128 * Self::words_per_step(dim));
        let mut out = vec![0.0; dim];
        Self::fill_step(&mut stream, self.h().sqrt(), &mut out);
        out
    }
}
