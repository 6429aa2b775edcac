//! Orthonormalization, symmetric eigendecomposition and PSD pseudoinverse.

use super::matrix::{dot, frobenius, norm, Matrix, Vector};
use crate::error::{Error, Result};

/// Residual norm (relative to the candidate's norm) below which a candidate
/// column counts as linearly dependent on the basis.
pub const DEPENDENCE_TOL: f64 = 1e-8;

/// Default relative eigenvalue cutoff for [`pinv_psd`].
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

const ORTHONORMAL_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-9;
const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Largest entry of `|Q^T Q - I|`.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let gram = q.tr_matmul(q).expect("Q^T Q is always defined");
    gram.max_abs_diff(&Matrix::identity(q.cols()))
}

/// Appends orthonormalized `candidates` to the orthonormal columns of `existing`.
///
/// Uses modified Gram–Schmidt with one full re-orthogonalization pass, which
/// keeps `R^T R = I` at roughly machine precision. The existing columns are
/// copied through untouched.
pub fn gram_schmidt(candidates: &Matrix, existing: &Matrix) -> Result<Matrix> {
    let d = candidates.rows();
    if existing.rows() != d {
        return Err(Error::Dimension(format!(
            "candidates have {d} rows but existing basis has {}",
            existing.rows()
        )));
    }
    let total = existing.cols() + candidates.cols();
    if total > d {
        return Err(Error::Dimension(format!(
            "cannot fit {total} orthonormal columns in dimension {d}"
        )));
    }
    if existing.cols() > 0 {
        let deviation = orthonormality_error(existing);
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::NotOrthogonal { deviation });
        }
    }

    let mut basis: Vec<Vector> = existing.columns();
    for j in 0..candidates.cols() {
        let candidate = candidates.column(j);
        let scale = candidate.norm();
        let mut v = candidate;
        for _pass in 0..2 {
            for q in &basis {
                let proj = dot(q, &v);
                v.axpy(-proj, q);
            }
        }
        let residual = v.norm();
        if scale == 0.0 || residual < DEPENDENCE_TOL * scale {
            return Err(Error::DegenerateInput(format!(
                "candidate column {j} is linearly dependent on the basis \
                 (residual {residual:e})"
            )));
        }
        basis.push(v.scaled(1.0 / residual));
    }
    Matrix::from_columns(d, &basis)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in descending order; column `i` of the returned
/// matrix is the unit eigenvector for eigenvalue `i`.
pub fn sym_eig(a: &Matrix) -> Result<(Vector, Matrix)> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let scale = a.max_abs().max(1.0);
    let mut max_asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { max_asym });
    }

    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_REL_TOL * frobenius(&m);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = Vector::from(order.iter().map(|&i| m[(i, i)]).collect::<Vec<_>>());
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Applies `M <- J^T M J`, `V <- V J` for the Givens rotation on `(p, q)`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `tol * lambda_max` are treated as zero.
pub fn pinv_psd(a: &Matrix, tol: f64) -> Result<Matrix> {
    let (values, vectors) = sym_eig(a)?;
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    let lambda_max = values.first().copied().unwrap_or(0.0);
    if lambda_max <= 0.0 {
        return Ok(out);
    }
    let cutoff = tol * lambda_max;
    for (i, &lambda) in values.iter().enumerate() {
        if lambda > cutoff {
            let u = vectors.column(i);
            out.add_outer(1.0 / lambda, &u, &u);
        }
    }
    Ok(out)
}

/// Relative residual `||A - B||_F / max(||A||_F, tiny)`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).expect("same shape");
    frobenius(&diff) / frobenius(a).max(1e-300)
}

/// Euclidean norm of column `j`.
pub fn column_norm(a: &Matrix, j: usize) -> f64 {
    norm(&a.column(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn random_symmetric(rng: &mut Rng, n: usize) -> Matrix {
        let g = rng.normal_matrix(n, n);
        Matrix::from_fn(n, n, |i, j| g[(i, j)] + g[(j, i)])
    }

    #[test]
    fn gram_schmidt_unit_candidate_passes_through() {
        let c = Matrix::new(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let r = gram_schmidt(&c, &Matrix::zeros(3, 0)).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn gram_schmidt_removes_existing_direction() {
        let c = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let e = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let r = gram_schmidt(&c, &e).unwrap();
        assert_eq!(r.column(0).as_slice(), &[1.0, 0.0]);
        let new = r.column(1);
        assert!(new[0].abs() < 1e-15);
        assert!((new[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_schmidt_seeded_extension_is_orthonormal() {
        let mut rng = Rng::new(5);
        let existing = gram_schmidt(&rng.normal_matrix(8, 2), &Matrix::zeros(8, 0)).unwrap();
        let r = gram_schmidt(&rng.normal_matrix(8, 3), &existing).unwrap();
        assert_eq!(r.shape(), (8, 5));
        // Gram matrix against identity, computed entry by entry.
        for i in 0..5 {
            for j in 0..5 {
                let g: f64 = (0..8).map(|k| r[(k, i)] * r[(k, j)]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((g - expected).abs() < 1e-10);
            }
        }
        assert_eq!(r.leading_columns(2), existing);
    }

    #[test]
    fn gram_schmidt_detects_dependence() {
        let c = Matrix::new(2, 1, vec![2.0, 0.0]).unwrap();
        let e = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            gram_schmidt(&c, &e),
            Err(Error::DegenerateInput(_))
        ));
        let too_many = Matrix::zeros(2, 2);
        assert!(matches!(
            gram_schmidt(&too_many, &e),
            Err(Error::Dimension(_))
        ));
        let bad_basis = Matrix::new(2, 1, vec![2.0, 0.0]).unwrap();
        assert!(matches!(
            gram_schmidt(&Matrix::new(2, 1, vec![0.0, 1.0]).unwrap(), &bad_basis),
            Err(Error::NotOrthogonal { .. })
        ));
    }

    #[test]
    fn sym_eig_identity() {
        let (l, v) = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(l.as_slice(), &[1.0, 1.0, 1.0]);
        assert!(orthonormality_error(&v) < 1e-15);
    }

    #[test]
    fn sym_eig_diagonal() {
        let a = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 4.0]).unwrap();
        let (l, v) = sym_eig(&a).unwrap();
        assert_eq!(l.as_slice(), &[4.0, 1.0]);
        assert_eq!(v.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(v.column(1).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn sym_eig_two_by_two() {
        let a = Matrix::new(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let (l, v) = sym_eig(&a).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-12);
        assert!((l[1] - 1.0).abs() < 1e-12);
        for i in 0..2 {
            let col = v.column(i);
            let av = a.mul_vec(&col).unwrap();
            for k in 0..2 {
                assert!((av[k] - l[i] * col[k]).abs() < 1e-12);
            }
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[(0, 0)].abs() - s).abs() < 1e-12);
        assert!((v[(0, 0)] - v[(1, 0)]).abs() < 1e-12);
        assert!((v[(0, 1)] + v[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
        assert!(matches!(
            pinv_psd(&a, DEFAULT_PINV_TOL),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sym_eig_reconstructs_random_matrices() {
        let mut rng = Rng::new(99);
        for n in 1..=12 {
            let a = random_symmetric(&mut rng, n);
            let (l, v) = sym_eig(&a).unwrap();
            assert!(orthonormality_error(&v) < 1e-8);
            let mut recon = Matrix::zeros(n, n);
            for i in 0..n {
                let c = v.column(i);
                recon.add_outer(l[i], &c, &c);
            }
            assert!(relative_error(&a, &recon) < 1e-8, "n={n}");
            for w in l.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn pinv_examples() {
        let a = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let p = pinv_psd(&a, 1e-10).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.0, 0.0, 0.0]);

        let p = pinv_psd(&Matrix::identity(4), DEFAULT_PINV_TOL).unwrap();
        assert!(p.max_abs_diff(&Matrix::identity(4)) < 1e-15);

        // rank one: u u^T with |u| = 2 has pseudoinverse u u^T / 16
        let u = [1.2, -1.6, 0.0];
        let mut a = Matrix::zeros(3, 3);
        a.add_outer(1.0, &u, &u);
        let p = pinv_psd(&a, DEFAULT_PINV_TOL).unwrap();
        let mut expected = Matrix::zeros(3, 3);
        expected.add_outer(1.0 / 16.0, &u, &u);
        assert!(p.max_abs_diff(&expected) < 1e-12);
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        assert!(relative_error(&a, &apa) < 1e-6);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let p = pinv_psd(&Matrix::zeros(3, 3), DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p, Matrix::zeros(3, 3));
    }
}
