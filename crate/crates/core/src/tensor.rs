//! Dense row-major `f64` matrices and the matmul kernels used by the tape.

use std::fmt;

use crate::error::{Result, SkiError};
use crate::par::{self, Exec};

/// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(SkiError::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(SkiError::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Scalar value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Matrix {
        Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(SkiError::shape(
                    "Matrix::vstack",
                    format!("{} columns vs {cols}", m.cols),
                ));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(SkiError::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_nn_into(self, other, &mut out, pick(exec, self.rows * self.cols * other.cols));
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(SkiError::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        matmul_nt_into(self, other, &mut out, pick(exec, self.rows * self.cols * other.rows));
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(SkiError::shape(
                "matmul_tn",
                format!("{:?}ᵀ x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        matmul_tn_into(self, other, &mut out, pick(exec, self.rows * self.cols * other.cols));
        Ok(out)
    }
}

fn pick(exec: Exec, work: usize) -> Exec {
    if work < PAR_THRESHOLD {
        Exec::Sequential
    } else {
        exec
    }
}

fn matmul_nn_into(a: &Matrix, b: &Matrix, out: &mut Matrix, exec: Exec) {
    let (k, n) = (a.cols, b.cols);
    par::for_each_row(exec, &mut out.data, n, |i, orow| {
        let arow = &a.data[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
}

fn matmul_nt_into(a: &Matrix, b: &Matrix, out: &mut Matrix, exec: Exec) {
    let k = a.cols;
    let n = b.rows;
    par::for_each_row(exec, &mut out.data, n, |i, orow| {
        let arow = &a.data[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * k..(j + 1) * k];
            *o = dot(arow, brow);
        }
    });
}

fn matmul_tn_into(a: &Matrix, b: &Matrix, out: &mut Matrix, exec: Exec) {
    // out[r, :] = Σ_i a[i, r] · b[i, :], accumulated in increasing i.
    let (m, k, n) = (a.rows, a.cols, b.cols);
    par::for_each_row(exec, &mut out.data, n, |r, orow| {
        for i in 0..m {
            let av = a.data[i * k + r];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(37, 19, &mut rng);
        let b = random(19, 23, &mut rng);
        let expect = naive(&a, &b);
        for exec in [Exec::Sequential, Exec::Parallel] {
            let nn = a.matmul(&b, exec).unwrap();
            let nt = a.matmul_nt(&b.transpose(), exec).unwrap();
            let tn = a.transpose().matmul_tn(&b, exec).unwrap();
            for m in [&nn, &nt, &tn] {
                for (x, y) in m.data().iter().zip(expect.data()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(256, 300, &mut rng);
        let b = random(300, 64, &mut rng);
        assert_eq!(
            a.matmul(&b, Exec::Sequential).unwrap(),
            a.matmul(&b, Exec::Parallel).unwrap()
        );
        assert_eq!(
            a.matmul_tn(&a, Exec::Sequential).unwrap(),
            a.matmul_tn(&a, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 3), Exec::Sequential).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
