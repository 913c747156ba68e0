//! Dense numerics substrate: a row-major `f64` matrix, Gaussian-elimination
//! inverse, stable softmax / log-sum-exp, a power-iteration spectral radius
//! estimate and the seeded generator every stochastic choice goes through.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CocaError, Result};

/// Pivots below this magnitude (after partial pivoting) mark a matrix singular.
pub const PIVOT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(CocaError::shape(
                format!("{rows}x{cols} = {} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · other`. Zero entries of `self` are skipped, which matters for
    /// sparse inputs such as MNIST pixels.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul row dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b_row = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks rows of `self` on top of rows of `other`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn mat_inverse(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(CocaError::shape("square matrix", format!("{}x{}", m.rows, m.cols)));
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, a.get(r, col).abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs < PIVOT_EPS {
            return Err(CocaError::SingularMatrix {
                column: col,
                pivot: pivot_abs,
            });
        }
        if pivot_row != col {
            swap_rows(&mut a, col, pivot_row);
            swap_rows(&mut inv, col, pivot_row);
        }
        let p = a.get(col, col);
        for j in 0..n {
            a.data[col * n + j] /= p;
            inv.data[col * n + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a.get(r, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a.data[r * n + j] -= factor * a.data[col * n + j];
                inv.data[r * n + j] -= factor * inv.data[col * n + j];
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let cols = m.cols;
    for j in 0..cols {
        m.data.swap(a * cols + j, b * cols + j);
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(CocaError::shape(
            format!("{} labels", logits.rows()),
            format!("{} labels", labels.len()),
        ));
    }
    let n = logits.rows();
    if n == 0 {
        return Ok((0.0, Matrix::zeros(0, logits.cols())));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(CocaError::IndexOutOfRange {
                index: y,
                len: logits.cols(),
            });
        }
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[y];
        let p = softmax(row);
        let g = grad.row_mut(i);
        for (gj, pj) in g.iter_mut().zip(&p) {
            *gj = pj * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Power-iteration estimate of the spectral radius. Returns 0 for the zero
/// matrix. Intended for diagnostics and tests only.
pub fn spectral_radius_bound(m: &Matrix, iters: usize) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    let n = m.rows;
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0) / n as f64).collect();
    let norm = l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let w: Vec<f64> = (0..n).map(|i| dot(m.row(i), &v)).collect();
        let wn = l2_norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        estimate = wn;
        v = w.into_iter().map(|x| x / wn).collect();
    }
    estimate
}

/// Seeded ChaCha8 generator. Equal seeds give bit-identical streams on every
/// platform; `derive` yields independent substreams for separate concerns
/// (init, stream order, reservoir, pretext draws).
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well_conditioned(n: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, rng.uniform_range(-1.0, 1.0));
            }
            let d = m.get(i, i);
            m.set(i, i, d + n as f64);
        }
        m
    }

    #[test]
    fn inverse_of_identity_is_identity() {
        let inv = mat_inverse(&Matrix::identity(4)).unwrap();
        assert_eq!(inv, Matrix::identity(4));
    }

    #[test]
    fn inverse_of_diagonal() {
        let inv = mat_inverse(&Matrix::from_diag(&[2.0, 4.0])).unwrap();
        assert_eq!(inv, Matrix::from_diag(&[0.5, 0.25]));
    }

    #[test]
    fn inverse_residual_on_random_matrix() {
        let mut rng = Rng::new(7);
        let m = well_conditioned(5, &mut rng);
        let inv = mat_inverse(&m).unwrap();
        let residual = m.matmul(&inv).sub(&Matrix::identity(5)).norm_inf();
        assert!(residual <= 5e-8, "residual {residual}");
    }

    #[test]
    fn inverse_needs_pivoting() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let inv = mat_inverse(&m).unwrap();
        assert_eq!(inv, m);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(mat_inverse(&m), Err(CocaError::SingularMatrix { .. })));
    }

    #[test]
    fn non_square_inverse_is_shape_error() {
        assert!(matches!(
            mat_inverse(&Matrix::zeros(2, 3)),
            Err(CocaError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn double_inverse_roundtrips() {
        let mut rng = Rng::new(11);
        for n in [1, 3, 8, 16] {
            let m = well_conditioned(n, &mut rng);
            let back = mat_inverse(&mat_inverse(&m).unwrap()).unwrap();
            assert!(back.sub(&m).max_abs() <= 1e-7);
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 0.0]);
        assert!(big.iter().all(|p| p.is_finite()));
        // exact log-domain value: p1 = exp(-1000 - log(1 + exp(-1000)))
        let oracle_p1 = (-1000.0 - (-1000f64).exp().ln_1p()).exp();
        assert!((big[0] - 1.0).abs() < 1e-15);
        assert!((big[1] - oracle_p1).abs() < 1e-300);
    }

    #[test]
    fn softmax_shift_invariance() {
        let v = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 17.25).collect();
        let a = softmax(&v);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Matrix::zeros(3, 4);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad.get(0, 0) - (0.25 - 1.0) / 3.0).abs() < 1e-15);
        assert!((grad.get(0, 1) - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_radius_cases() {
        assert!((spectral_radius_bound(&Matrix::identity(3), 100) - 1.0).abs() < 1e-6);
        assert!((spectral_radius_bound(&Matrix::from_diag(&[0.3, 0.1]), 200) - 0.3).abs() < 1e-6);
        assert_eq!(spectral_radius_bound(&Matrix::zeros(4, 4), 10), 0.0);

        let mut rng = Rng::new(3);
        let mut m = Matrix::zeros(8, 8);
        for i in 0..8 {
            let row: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
            let s: f64 = row.iter().sum();
            for (j, v) in row.into_iter().enumerate() {
                m.set(i, j, 0.1 * v / s);
            }
        }
        // every row sums to 0.1, so the induced inf-norm bounds the radius
        let rho = spectral_radius_bound(&m, 200);
        assert!(rho < 0.1 + 1e-6, "rho {rho}");
        assert!(rho <= m.norm_inf() + 1e-12);
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::derive(42, 1);
        let mut d = Rng::derive(42, 2);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn transpose_products_agree() {
        let mut rng = Rng::new(5);
        let a = Matrix::new(3, 4, (0..12).map(|_| rng.uniform()).collect()).unwrap();
        let b = Matrix::new(3, 2, (0..6).map(|_| rng.uniform()).collect()).unwrap();
        let c = Matrix::new(5, 4, (0..20).map(|_| rng.uniform()).collect()).unwrap();
        assert!(a.t_matmul(&b).sub(&a.transpose().matmul(&b)).max_abs() < 1e-14);
        assert!(a.matmul_t(&c).sub(&a.matmul(&c.transpose())).max_abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_on_simplex(v in proptest::collection::vec(-500.0f64..500.0, 1..20)) {
                let p = softmax(&v);
                prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
