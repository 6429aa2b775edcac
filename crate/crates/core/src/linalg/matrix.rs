//! Dense row-major matrices and vectors over `f64`.
//!
//! Storage is `data[i * cols + j] = A[i, j]`. Constructors that accept
//! external data reject non-finite entries so that every value handed to
//! the rest of the crate is finite.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use crate::error::{Error, Result};

/// A dense vector.
#[derive(Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Wraps `data`, rejecting NaN or infinite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Vector::new"));
        }
        Ok(Vector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit vector in the same direction.
    ///
    /// Fails with `DegenerateInput` when the norm is below `1e-12`.
    pub fn normalized(&self) -> Result<Vector> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateInput(format!(
                "cannot normalize vector of norm {n:e}"
            )));
        }
        Ok(Vector(self.0.iter().map(|x| x / n).collect()))
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        debug_assert_eq!(self.dim(), x.len());
        for (a, b) in self.0.iter_mut().zip(x) {
            *a += alpha * b;
        }
    }

    /// Arithmetic mean of equally sized vectors. Returns `None` for an empty slice.
    pub fn mean_of<V: AsRef<[f64]>>(vectors: &[V]) -> Option<Vector> {
        let first = vectors.first()?.as_ref();
        let mut acc = Vector::zeros(first.len());
        for v in vectors {
            acc.axpy(1.0, v.as_ref());
        }
        let n = vectors.len() as f64;
        Some(acc.scaled(1.0 / n))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Vector(data.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `a` and `b`; zero if either is (near) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom < 1e-300 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// A dense matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a `dim x columns.len()` matrix whose columns are the given vectors.
    pub fn from_columns<V: AsRef<[f64]>>(dim: usize, columns: &[V]) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.as_ref().len() != dim) {
            return Err(Error::Dimension(format!(
                "column of length {} in a matrix with {dim} rows",
                bad.as_ref().len()
            )));
        }
        let m = Matrix::from_fn(dim, columns.len(), |i, j| columns[j].as_ref()[i]);
        if m.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_columns"));
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector::from((0..self.rows).map(|i| self.get(i, j)).collect::<Vec<_>>())
    }

    pub fn columns(&self) -> Vec<Vector> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    /// First `n` columns.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        assert!(n <= self.cols);
        Matrix::from_fn(self.rows, n, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A^T B` without materializing the transpose.
    pub fn tr_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "cannot form A^T B for {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (o, b) in out.row_mut(i).iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(Vector::from(
            (0..self.rows)
                .map(|i| dot(self.row(i), x))
                .collect::<Vec<_>>(),
        ))
    }

    /// `A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply ({}x{})^T by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = Vector::zeros(self.cols);
        for (i, xi) in x.iter().enumerate() {
            out.axpy(*xi, self.row(i));
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// `self += alpha * a b^T`
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), self.rows);
        assert_eq!(b.len(), self.cols);
        for (i, ai) in a.iter().enumerate() {
            let s = alpha * ai;
            if s == 0.0 {
                continue;
            }
            for (o, bj) in self.row_mut(i).iter_mut().zip(b) {
                *o += s * bj;
            }
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Frobenius norm `sqrt(sum a_ij^2)`.
pub fn frobenius(a: &Matrix) -> f64 {
    norm(a.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_examples() {
        assert!((frobenius(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius(&Matrix::zeros(4, 2)), 0.0);
        let m = Matrix::new(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(frobenius(&m), 5.0);
    }

    #[test]
    fn constructors_reject_bad_data() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_and_transpose_agree() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::new(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let direct = a.transpose().matmul(&b).unwrap();
        let fused = a.tr_matmul(&b).unwrap();
        assert_eq!(direct, fused);
        assert_eq!(direct.shape(), (3, 2));
        assert_eq!(direct[(0, 0)], 1.0 * 1.0 + 4.0 * 0.5);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn mat_vec_products() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(
            a.mul_vec(&[1.0, 0.0, -1.0]).unwrap().as_slice(),
            &[-2.0, -2.0]
        );
        assert_eq!(
            a.tr_mul_vec(&[1.0, 1.0]).unwrap().as_slice(),
            &[5.0, 7.0, 9.0]
        );
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(
            Vector::zeros(3).normalized(),
            Err(Error::DegenerateInput(_))
        ));
        let v = Vector::from(vec![3.0, 4.0]).normalized().unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn mean_of_vectors() {
        let m = Vector::mean_of(&[vec![0.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 3.0]);
        assert!(Vector::mean_of::<Vec<f64>>(&[]).is_none());
    }
}
