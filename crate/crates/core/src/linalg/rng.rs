//! Seeded, platform-independent random numbers.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{Matrix, Vector};

/// Deterministic generator: equal seeds give equal streams on every platform.
///
/// Backed by ChaCha8; Gaussian draws use the Box–Muller transform.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal via Box–Muller; the second value of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * phi.sin());
        r * phi.cos()
    }

    pub fn normal_vector(&mut self, dim: usize) -> Vector {
        Vector::from((0..dim).map(|_| self.normal()).collect::<Vec<_>>())
    }

    /// `rows x cols` matrix of i.i.d. standard normals, filled column by column.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let columns: Vec<Vector> = (0..cols).map(|_| self.normal_vector(rows)).collect();
        Matrix::from_columns(rows, &columns).expect("normal draws are finite")
    }

    /// Uniform point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vector {
        loop {
            if let Ok(v) = self.normal_vector(dim).normalized() {
                return v;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Mixes a parent seed with a stream label into an independent sub-seed
/// (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
