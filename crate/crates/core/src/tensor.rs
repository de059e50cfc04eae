//! Dense row-major `f64` matrices.
//!
//! Everything in the model is a 2-D matrix: node-feature blocks are `N×D`,
//! vectors are `1×k` rows and scalars are `1×1`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Mat { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match shape {rows}x{cols}");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols, data }
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch {:?} x {:?}", self.shape(), other.shape());
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        gemm(&self.data, &other.data, &mut out, n, k, m);
        Mat { rows: n, cols: m, data: out }
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch {:?} x {:?}", self.shape(), other.shape());
        self.transpose().matmul(other)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch {:?} x {:?}", self.shape(), other.shape());
        self.matmul(&other.transpose())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Rows `perm[0], perm[1], …` of `self`.
    pub fn select_rows(&self, perm: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(perm.len() * self.cols);
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Mat { rows: perm.len(), cols: self.cols, data }
    }

    /// `P·self·Pᵀ` for the permutation given as a row order.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Mat {
        Mat::from_fn(perm.len(), perm.len(), |i, j| self[(perm[i], perm[j])])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

const LANES: usize = 8;
const ROWS: usize = 4;

/// `out = a·b` for row-major `a: n×k`, `b: k×m`.
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    #[cfg(target_arch = "x86_64")]
    if avx2_fma::get() {
        // SAFETY: the CPU supports the enabled features.
        unsafe { gemm_avx2(a, b, out, n, k, m) };
        return;
    }
    gemm_body(a, b, out, n, k, m);
}

#[cfg(target_arch = "x86_64")]
cpufeatures::new!(avx2_fma, "avx2", "fma");

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_avx2(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm_body(a, b, out, n, k, m);
}

#[inline(always)]
fn gemm_body(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    let mut i = 0;
    while i + ROWS <= n {
        row_block::<ROWS>(a, b, out, i, k, m);
        i += ROWS;
    }
    while i < n {
        row_block::<1>(a, b, out, i, k, m);
        i += 1;
    }
}

/// Rows `i..i + R` of the product, `LANES` output columns at a time.
#[inline(always)]
fn row_block<const R: usize>(a: &[f64], b: &[f64], out: &mut [f64], i: usize, k: usize, m: usize) {
    let rows: [&[f64]; R] = core::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    let strips = m / LANES;
    for s in 0..strips {
        let j = s * LANES;
        let mut acc = [[0.0; LANES]; R];
        for p in 0..k {
            let bs: &[f64; LANES] = b[p * m + j..p * m + j + LANES].try_into().unwrap();
            for r in 0..R {
                let x = rows[r][p];
                for l in 0..LANES {
                    acc[r][l] += x * bs[l];
                }
            }
        }
        for r in 0..R {
            out[(i + r) * m + j..(i + r) * m + j + LANES].copy_from_slice(&acc[r]);
        }
    }
    for j in strips * LANES..m {
        for r in 0..R {
            let mut acc = 0.0;
            for p in 0..k {
                acc += rows[r][p] * b[p * m + j];
            }
            out[(i + r) * m + j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Mat::from_rows(&[&[1.0, 0.5], &[-1.0, 2.0], &[0.0, 3.0]]);
        let ab = a.matmul(&b);
        assert_eq!(ab, Mat::from_rows(&[&[-1.0, 13.5], &[-1.0, 30.0]]));
        assert_eq!(a.transpose().t_matmul(&b), ab);
        assert_eq!(a.matmul_t(&b.transpose()), ab);
    }

    #[test]
    fn sums() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.row_sums(), vec![3.0, 7.0]);
        assert_eq!(a.col_sums(), vec![4.0, 6.0]);
        assert_eq!(a.sum(), 10.0);
        assert_eq!(a.frobenius_sq(), 30.0);
    }
}
