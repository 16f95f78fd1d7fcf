//! Small dense linear algebra: a row-major matrix and a Cholesky factorization with
//! a diagonal jitter ladder. Matrices here are at most a few dozen rows wide.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-9, 1e-6, 1e-3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
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
        Mat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Mat { rows, cols, data })
    }

    /// `v v^T`.
    pub fn outer(v: &[f64]) -> Self {
        Mat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T other` without forming the transpose.
    pub fn tmatmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "tmatmul shape mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`.
    pub fn tmatvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tmatvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(&mut out, vi, self.row(i));
        }
        out
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add shape mismatch");
        axpy(&mut self.data, s, &other.data);
    }

    /// `self += s * v v^T`.
    pub fn add_outer(&mut self, s: f64, v: &[f64]) {
        for (i, &vi) in v.iter().enumerate() {
            let c = s * vi;
            axpy(self.row_mut(i), c, v);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_diag(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }

    /// `sum_ij A_ij B_ij`, equal to `tr(A B)` for symmetric arguments.
    pub fn frob_dot(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "frob shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn symmetrize(&mut self) {
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Lower triangle packed row by row.
    pub fn to_packed_lower(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * (self.rows + 1) / 2);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[..=i]);
        }
        out
    }

    /// Rebuilds a symmetric matrix from [`Mat::to_packed_lower`].
    pub fn from_packed_lower(n: usize, packed: &[f64]) -> Result<Mat> {
        if packed.len() != n * (n + 1) / 2 {
            return Err(Error::Dimension(format!("{} packed values for order {n}", packed.len())));
        }
        let mut m = Mat::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] = packed[k];
                m[(j, i)] = packed[k];
                k += 1;
            }
        }
        Ok(m)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`.
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
    /// Diagonal jitter that had to be added to succeed.
    pub jitter: f64,
}

impl Cholesky {
    /// Plain factorization; fails unless the matrix is numerically positive definite.
    pub fn new(a: &Mat) -> Option<Cholesky> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky of a non-square matrix");
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            d = libm::sqrt(d);
            l[(j, j)] = d;
            for i in j + 1..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Some(Cholesky { l, jitter: 0.0 })
    }

    /// Tries the bare matrix, then each rung of [`JITTER_LADDER`].
    pub fn with_jitter(a: &Mat, block: &'static str) -> Result<Cholesky> {
        if let Some(c) = Cholesky::new(a) {
            return Ok(c);
        }
        for &j in &JITTER_LADDER {
            let mut b = a.clone();
            b.add_diag(j);
            if let Some(mut c) = Cholesky::new(&b) {
                c.jitter = j;
                return Ok(c);
            }
        }
        Err(Error::numerical(block, format!("matrix of order {} not positive definite", a.rows())))
    }

    pub fn factor(&self) -> &Mat {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| libm::log(*d)).sum::<f64>()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// `A^{-1}`, exactly symmetric.
    pub fn inverse(&self) -> Mat {
        let n = self.l.rows();
        // Invert L, then form L^{-T} L^{-1}.
        let mut li = Mat::zeros(n, n);
        for j in 0..n {
            li[(j, j)] = 1.0 / self.l[(j, j)];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s += self.l[(i, k)] * li[(k, j)];
                }
                li[(i, j)] = -s / self.l[(i, i)];
            }
        }
        let mut inv = li.tmatmul(&li);
        inv.symmetrize();
        inv
    }
}

/// Factor of a positive semidefinite matrix: pivots at or below `tol` times the
/// largest diagonal give zero columns instead of failing. Used for sampling
/// from covariances that contain exact point masses.
pub fn psd_factor(a: &Mat) -> Mat {
    let n = a.rows();
    let scale = a.diag().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if d <= tol {
            continue;
        }
        let d = libm::sqrt(d);
        l[(j, j)] = d;
        for i in j + 1..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / d;
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat {
        let a = Mat::from_fn(n, n, |i, j| libm::sin((i * 7 + j * 3) as f64) + if i == j { 0.5 } else { 0.0 });
        let mut s = a.tmatmul(&a);
        s.add_diag(0.1);
        s
    }

    #[test]
    fn cholesky_roundtrip_and_inverse() {
        let a = spd(6);
        let c = Cholesky::new(&a).unwrap();
        let l = c.factor();
        assert!(l.matmul(&l.transpose()).max_abs_diff(&a) < 1e-12);
        let prod = a.matmul(&c.inverse());
        assert!(prod.max_abs_diff(&Mat::identity(6)) < 1e-10);
        let b = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let x = c.solve(&b);
        let ax = a.matvec(&x);
        assert!(ax.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn jitter_rescues_singular() {
        let v = [1.0, 2.0, 3.0];
        let a = Mat::outer(&v);
        assert!(Cholesky::new(&a).is_none());
        let c = Cholesky::with_jitter(&a, "test").unwrap();
        assert!(c.jitter > 0.0);
        let mut neg = Mat::identity(2);
        neg[(1, 1)] = -1.0;
        assert!(Cholesky::with_jitter(&neg, "test").is_err());
    }

    #[test]
    fn packed_roundtrip() {
        let a = spd(4);
        let p = a.to_packed_lower();
        assert_eq!(p.len(), 10);
        assert_eq!(Mat::from_packed_lower(4, &p).unwrap(), a);
    }

    #[test]
    fn psd_factor_handles_zero_rows() {
        let mut a = spd(3);
        for k in 0..3 {
            a[(1, k)] = 0.0;
            a[(k, 1)] = 0.0;
        }
        let l = psd_factor(&a);
        assert!(l.matmul(&l.transpose()).max_abs_diff(&a) < 1e-12);
    }
}
