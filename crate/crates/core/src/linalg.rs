//! Dense row-major matrices and a column-pivoted Householder QR.
//!
//! Least-squares problems throughout the crate go through [`Qr`]; nothing
//! forms an explicit inverse of `XᵀX` to solve a system.

use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::scalar::Scalar;

/// Relative tolerance on `|R_kk| / |R_00|` below which a pivot counts as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from row vectors; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Builds from column vectors; all columns must share a length.
    pub fn from_columns(columns: &[Vec<T>]) -> Self {
        let rows = columns.first().map_or(0, Vec::len);
        Self::from_fn(rows, columns.len(), |i, j| columns[j][i])
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    /// Prepends a column of ones.
    pub fn with_intercept(&self) -> Self {
        Self::from_fn(self.rows, self.cols + 1, |i, j| {
            if j == 0 {
                T::one()
            } else {
                self[(i, j - 1)]
            }
        })
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
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

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Householder QR with column pivoting, `A P = Q R`.
///
/// Storage is column-major: below-diagonal entries hold the Householder
/// vectors (with implicit unit leading entry), the upper triangle holds `R`.
#[derive(Debug, Clone)]
pub struct Qr<T> {
    m: usize,
    n: usize,
    a: Vec<T>,
    tau: Vec<T>,
    perm: Vec<usize>,
    rank: usize,
}

impl<T: Scalar> Qr<T> {
    pub fn new(mat: &Matrix<T>) -> Self {
        Self::with_tolerance(mat, T::of(RANK_TOL))
    }

    pub fn with_tolerance(mat: &Matrix<T>, rel_tol: T) -> Self {
        let (m, n) = (mat.nrows(), mat.ncols());
        let mut a = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                a[j * m + i] = mat[(i, j)];
            }
        }
        Self::factor(m, n, a, rel_tol)
    }

    /// Factors `diag(sqrt(w)) · mat` without materialising the scaled matrix.
    pub fn weighted(mat: &Matrix<T>, weights: &[T]) -> Self {
        let (m, n) = (mat.nrows(), mat.ncols());
        let mut a = vec![T::zero(); m * n];
        for i in 0..m {
            let s = weights[i].sqrt();
            for j in 0..n {
                a[j * m + i] = s * mat[(i, j)];
            }
        }
        Self::factor(m, n, a, T::of(RANK_TOL))
    }

    fn factor(m: usize, n: usize, mut a: Vec<T>, rel_tol: T) -> Self {
        let steps = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut tau = vec![T::zero(); steps];
        let mut norms: Vec<T> = (0..n).map(|j| sq_norm(&a[j * m..(j + 1) * m])).collect();

        for k in 0..steps {
            // Pivot: largest remaining column norm, lowest index on ties.
            let mut best = k;
            for j in (k + 1)..n {
                if norms[j] > norms[best] {
                    best = j;
                }
            }
            if best != k {
                for i in 0..m {
                    a.swap(k * m + i, best * m + i);
                }
                norms.swap(k, best);
                perm.swap(k, best);
            }

            let col = &mut a[k * m..(k + 1) * m];
            let alpha = sq_norm(&col[k..]).sqrt();
            if alpha == T::zero() {
                tau[k] = T::zero();
            } else {
                let beta = if col[k] > T::zero() { -alpha } else { alpha };
                let v0 = col[k] - beta;
                for x in col[k + 1..].iter_mut() {
                    *x /= v0;
                }
                tau[k] = (beta - col[k]) / beta;
                col[k] = beta;

                // Apply H_k = I - tau v vᵀ to the trailing columns.
                for j in (k + 1)..n {
                    let (head, tail) = a.split_at_mut(j * m);
                    let v = &head[k * m..(k + 1) * m];
                    let c = &mut tail[..m];
                    let mut s = c[k];
                    for i in (k + 1)..m {
                        s += v[i] * c[i];
                    }
                    s *= tau[k];
                    c[k] -= s;
                    for i in (k + 1)..m {
                        c[i] -= s * v[i];
                    }
                }
            }
            for j in (k + 1)..n {
                norms[j] = sq_norm(&a[j * m + k + 1..(j + 1) * m]);
            }
        }

        let r00 = if steps > 0 { a[0].abs() } else { T::zero() };
        let mut rank = 0;
        if r00 > T::zero() {
            for k in 0..steps {
                if a[k * m + k].abs() > rel_tol * r00 {
                    rank += 1;
                } else {
                    break;
                }
            }
        }
        Self {
            m,
            n,
            a,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n
    }

    /// Original column indices judged linearly dependent on the others.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut d = self.perm[self.rank..].to_vec();
        d.sort_unstable();
        d
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> T {
        self.a[j * self.m + i]
    }

    /// Overwrites `b` (length m) with `Qᵀ b`.
    pub fn apply_qt(&self, b: &mut [T]) {
        let m = self.m;
        for k in 0..self.tau.len() {
            if self.tau[k] == T::zero() {
                continue;
            }
            let v = &self.a[k * m..(k + 1) * m];
            let mut s = b[k];
            for i in (k + 1)..m {
                s += v[i] * b[i];
            }
            s *= self.tau[k];
            b[k] -= s;
            for i in (k + 1)..m {
                b[i] -= s * v[i];
            }
        }
    }

    /// Basic least-squares solution: coefficients of dependent columns are zero.
    pub fn solve_least_squares(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.m);
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let r = self.rank;
        let mut z = vec![T::zero(); r];
        for i in (0..r).rev() {
            let mut s = qtb[i];
            for j in (i + 1)..r {
                s -= self.r(i, j) * z[j];
            }
            z[i] = s / self.r(i, i);
        }
        let mut x = vec![T::zero(); self.n];
        for (k, &zk) in z.iter().enumerate() {
            x[self.perm[k]] = zk;
        }
        x
    }

    /// `(AᵀA)⁻¹ v` through two triangular solves. Requires full rank.
    pub fn solve_normal(&self, v: &[T]) -> Vec<T> {
        debug_assert!(self.is_full_rank());
        let n = self.n;
        // Rᵀ z = Pᵀ v
        let mut z = vec![T::zero(); n];
        for i in 0..n {
            let mut s = v[self.perm[i]];
            for j in 0..i {
                s -= self.r(j, i) * z[j];
            }
            z[i] = s / self.r(i, i);
        }
        // R u = z
        let mut u = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in (i + 1)..n {
                s -= self.r(i, j) * u[j];
            }
            u[i] = s / self.r(i, i);
        }
        let mut x = vec![T::zero(); n];
        for (k, &uk) in u.iter().enumerate() {
            x[self.perm[k]] = uk;
        }
        x
    }

    /// Diagonal of `(AᵀA)⁻¹`. Requires full rank.
    pub fn normal_inverse_diagonal(&self) -> Vec<T> {
        let n = self.n;
        // diag((AᵀA)⁻¹)[perm[k]] = row-norm² of R⁻¹ at row k.
        let mut rinv = vec![T::zero(); n * n];
        for c in 0..n {
            // column c of R⁻¹
            for i in (0..=c).rev() {
                let mut s = if i == c { T::one() } else { T::zero() };
                for j in (i + 1)..=c {
                    s -= self.r(i, j) * rinv[j * n + c];
                }
                rinv[i * n + c] = s / self.r(i, i);
            }
        }
        let mut d = vec![T::zero(); n];
        for k in 0..n {
            d[self.perm[k]] = rinv[k * n..(k + 1) * n].iter().map(|&x| x * x).sum();
        }
        d
    }
}

fn sq_norm<T: Scalar>(v: &[T]) -> T {
    let mut s = T::zero();
    for &x in v {
        s += x * x;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![1.0, -1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 4.0, -2.0],
            vec![1.0, 1.5, 0.0],
        ]);
        let x = [0.5, -2.0, 3.0];
        let b = a.matvec(&x);
        let qr = Qr::new(&a);
        assert!(qr.is_full_rank());
        let got = qr.solve_least_squares(&b);
        for (g, e) in got.iter().zip(x) {
            assert!(approx(*g, e, 1e-12), "{got:?}");
        }
    }

    #[test]
    fn normal_solve_matches_gram_system() {
        let a = Matrix::from_fn(7, 3, |i, j| ((i * 3 + j * 5) % 7) as f64 + 0.25 * j as f64);
        let qr = Qr::new(&a);
        let v = [1.0, -2.0, 0.5];
        let x = qr.solve_normal(&v);
        let gram = a.transpose().matmul(&a);
        let back = gram.matvec(&x);
        for (b, e) in back.iter().zip(v) {
            assert!(approx(*b, e, 1e-10));
        }
        let diag = qr.normal_inverse_diagonal();
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            let col = qr.solve_normal(&e);
            assert!(approx(diag[k], col[k], 1e-10));
        }
    }

    #[test]
    fn detects_dependent_column() {
        let a = Matrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        let qr = Qr::new(&a);
        assert_eq!(qr.rank(), 2);
        assert_eq!(qr.dependent_columns().len(), 1);
    }
}
