//! Minimal dense linear algebra in `f64`.

mod decompose;
mod matrix;
mod rng;

pub use decompose::{
    column_norm, gram_schmidt, orthonormality_error, pinv_psd, relative_error, sym_eig,
    DEFAULT_PINV_TOL, DEPENDENCE_TOL,
};
pub use matrix::{cosine, dot, frobenius, norm, Matrix, Vector};
pub use rng::{derive_seed, Rng};
