//! Small dense row-major matrices and Cholesky routines.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> Matrix<T> {
        self.transpose_mul(self)
    }

    /// `selfᵀ other`.
    pub fn transpose_mul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.rows, other.rows, "transpose_mul shape");
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == T::zero() {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        out
    }

    /// `selfᵀ v`.
    pub fn transpose_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "transpose_vec shape");
        let mut out = vec![T::zero(); self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Lower Cholesky factor `L` with `L Lᵀ = a`.
///
/// Returns `None` when a pivot falls below `tol` times the largest diagonal
/// entry of `a` (numerically singular or indefinite).
pub fn cholesky<T: Scalar>(a: &Matrix<T>, tol: T) -> Option<Matrix<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky needs a square matrix");
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max).max(T::min_positive_value());
    // L keeps the row envelope of A, so sums start at the later of the two rows' first nonzeros.
    let first: Vec<usize> = (0..n).map(|i| (0..i).find(|&j| a[(i, j)] != T::zero()).unwrap_or(i)).collect();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let d = a[(j, j)] - lj[first[j]..].iter().map(|&v| v * v).sum::<T>();
        if !(d > tol * scale) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            if first[i] > j {
                continue;
            }
            let k0 = first[i].max(first[j]);
            let s = a[(i, j)] - dot(&l.data[i * n + k0..i * n + j], &l.data[j * n + k0..j * n + j]);
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_solve<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn back_solve_transposed<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `L X = B` column by column.
pub fn forward_solve_matrix<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// `(L Lᵀ)⁻¹` from a lower Cholesky factor.
pub fn cholesky_inverse<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = back_solve_transposed(l, &forward_solve(l, &e));
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv
}

/// Solves the symmetric positive definite system `a x = b`.
pub fn spd_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    let l = cholesky(a, T::zero())?;
    Some(back_solve_transposed(&l, &forward_solve(&l, b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix<f64> {
        Matrix::from_rows(3, 3, vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0])
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd();
        let l = cholesky(&a, 0.0).unwrap();
        let back = l.matmul(&l.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_and_solve_agree() {
        let a = spd();
        let l = cholesky(&a, 0.0).unwrap();
        let inv = cholesky_inverse(&l);
        let id = a.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-12);
            }
        }
        let x = spd_solve(&a, &[1.0, 2.0, 3.0]).unwrap();
        let ax = a.matvec(&x);
        assert!((ax[0] - 1.0).abs() < 1e-12 && (ax[1] - 2.0).abs() < 1e-12 && (ax[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_rows_factor_like_dense() {
        // Block-diagonal lead with a dense trailing border, as in crossed random effects.
        let n = 7;
        let mut a = Matrix::<f64>::identity(n);
        for i in 0..n {
            a[(i, i)] = 4.0 + i as f64;
        }
        a[(1, 0)] = 0.5;
        a[(0, 1)] = 0.5;
        for i in 5..n {
            for j in 0..i {
                let v = 0.3 / (1.0 + (i + j) as f64);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let l = cholesky(&a, 0.0).unwrap();
        let back = l.matmul(&l.transpose());
        for i in 0..n {
            for j in 0..n {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
        assert_eq!(l[(3, 2)], 0.0);
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = Matrix::from_rows(2, 2, vec![1.0_f32, 1.0, 1.0, 1.0]);
        assert!(cholesky(&a, 1e-6).is_none());
    }

    #[test]
    fn gram_matches_explicit_product() {
        let x = Matrix::from_rows(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(x.gram(), x.transpose().matmul(&x));
        assert_eq!(x.transpose_vec(&[1.0, 0.0, 2.0]), vec![11.0, 14.0]);
        let m = forward_solve_matrix(&cholesky(&spd(), 0.0).unwrap(), &Matrix::identity(3));
        assert_eq!(m.rows(), 3);
    }
}
