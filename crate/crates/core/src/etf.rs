//! Simplex equiangular tight frame classifiers that grow with the class count.
//!
//! For an orthonormal basis `U` (d x K) the anchors are
//! `M = sqrt(K / (K - 1)) * U * (I_K - 11^T / K)`: unit columns with pairwise
//! cosine `-1 / (K - 1)`. Growing the classifier keeps every existing basis
//! column and appends new ones, so only the centering term changes for old
//! anchors.

use crate::error::{Error, Result};
use crate::linalg::{gram_schmidt, orthonormality_error, Matrix, Rng, Vector};

const ORTHONORMAL_TOL: f64 = 1e-9;
const MAX_DRAWS: usize = 16;

/// Multiplier applied to the target class count when deriving the seed of an
/// expansion step: `sub_seed = seed ^ (k_new * GOLDEN)`.
pub const EXPANSION_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Builds simplex ETF anchors from an orthonormal basis.
pub fn build_etf(basis: &Matrix) -> Result<Matrix> {
    let (d, k) = basis.shape();
    if k < 2 {
        return Err(Error::Dimension(format!(
            "a simplex ETF needs at least 2 vertices, got {k}"
        )));
    }
    if d < k {
        return Err(Error::Dimension(format!(
            "dimension {d} is smaller than the class count {k}"
        )));
    }
    let deviation = orthonormality_error(basis);
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NotOrthogonal { deviation });
    }

    let scale = (k as f64 / (k as f64 - 1.0)).sqrt();
    let mut centroid = Vector::zeros(d);
    for j in 0..k {
        centroid.axpy(1.0 / k as f64, &basis.column(j));
    }
    Ok(Matrix::from_fn(d, k, |i, j| {
        scale * (basis[(i, j)] - centroid[i])
    }))
}

/// ETF anchor set plus the orthonormal basis it is derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct EtfClassifier {
    basis: Matrix,
    anchors: Matrix,
    seed: u64,
}

impl EtfClassifier {
    /// Draws `num_classes` seeded Gaussian columns, orthonormalizes them and
    /// builds the anchors.
    pub fn new(dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        check_size(dim, num_classes)?;
        let mut rng = Rng::new(seed);
        let basis = extend_basis(&mut rng, &Matrix::zeros(dim, 0), num_classes)?;
        let anchors = build_etf(&basis)?;
        Ok(EtfClassifier {
            basis,
            anchors,
            seed,
        })
    }

    /// Classifier over a caller-supplied orthonormal basis. `seed` drives
    /// later expansions.
    pub fn from_basis(basis: Matrix, seed: u64) -> Result<Self> {
        let anchors = build_etf(&basis)?;
        Ok(EtfClassifier {
            basis,
            anchors,
            seed,
        })
    }

    /// Grows the classifier to `num_classes` anchors, keeping every existing
    /// basis column bit for bit.
    pub fn expand(&self, num_classes: usize) -> Result<Self> {
        self.check_growth(num_classes)?;
        let mut rng = Rng::new(expansion_seed(self.seed, num_classes));
        let basis = extend_basis(&mut rng, &self.basis, num_classes - self.num_classes())?;
        let anchors = build_etf(&basis)?;
        Ok(EtfClassifier {
            basis,
            anchors,
            seed: self.seed,
        })
    }

    /// Grows the classifier by drawing an entirely new basis instead of
    /// extending the current one.
    pub fn regenerate(&self, num_classes: usize) -> Result<Self> {
        self.check_growth(num_classes)?;
        let fresh = EtfClassifier::new(
            self.dim(),
            num_classes,
            expansion_seed(self.seed, num_classes),
        )?;
        Ok(EtfClassifier {
            seed: self.seed,
            ..fresh
        })
    }

    fn check_growth(&self, num_classes: usize) -> Result<()> {
        if num_classes <= self.num_classes() {
            return Err(Error::InvalidExpansion {
                current: self.num_classes(),
                requested: num_classes,
            });
        }
        check_size(self.dim(), num_classes)
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.basis.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// `d x K` matrix whose column `k` is the anchor of class index `k`.
    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn anchor(&self, k: usize) -> Vector {
        self.anchors.column(k)
    }

    pub fn anchor_columns(&self) -> Vec<Vector> {
        self.anchors.columns()
    }
}

fn check_size(dim: usize, num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Dimension(format!(
            "an ETF classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    if num_classes > dim {
        return Err(Error::Dimension(format!(
            "{num_classes} classes do not fit in dimension {dim}"
        )));
    }
    Ok(())
}

fn expansion_seed(seed: u64, num_classes: usize) -> u64 {
    seed ^ (num_classes as u64).wrapping_mul(EXPANSION_SEED_MIX)
}

fn extend_basis(rng: &mut Rng, existing: &Matrix, extra: usize) -> Result<Matrix> {
    let d = existing.rows();
    let mut last_err = None;
    for _ in 0..MAX_DRAWS {
        let candidates = rng.normal_matrix(d, extra);
        match gram_schmidt(&candidates, existing) {
            Ok(basis) => return Ok(basis),
            Err(e @ Error::DegenerateInput(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one draw was made"))
}
