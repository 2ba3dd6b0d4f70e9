//! Dense row-major matrices.
//!
//! Only what the MLP passes need: shape-checked products (optionally against
//! a transposed operand), elementwise updates, and a few constructors. GEMM is
//! delegated to `matrixmultiply`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Whether a product operand is used as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Mat::from_vec", rows * cols, data.len())?;
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Mat::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Mat {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        self.check_same_shape("Mat::zip_map", other)?;
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mat) -> Result<()> {
        self.check_same_shape("Mat::axpy", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        check_dim("Mat::add_row_broadcast", self.cols, bias.len())?;
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums, i.e. the bias gradient of a batched affine layer.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn dot(&self, other: &Mat) -> Result<f64> {
        self.check_same_shape("Mat::dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn check_same_shape(&self, context: &'static str, other: &Mat) -> Result<()> {
        check_dim(context, self.rows, other.rows)?;
        check_dim(context, self.cols, other.cols)
    }

    fn op_shape(&self, op: Op) -> (usize, usize) {
        match op {
            Op::N => (self.rows, self.cols),
            Op::T => (self.cols, self.rows),
        }
    }

    fn op_strides(&self, op: Op) -> (isize, isize) {
        let (rs, cs) = (self.cols as isize, 1isize);
        match op {
            Op::N => (rs, cs),
            Op::T => (cs, rs),
        }
    }
}

/// `op(a) · op(b)`
pub fn matmul(a: &Mat, op_a: Op, b: &Mat, op_b: Op) -> Result<Mat> {
    let (m, k) = a.op_shape(op_a);
    let (k2, n) = b.op_shape(op_b);
    if k != k2 {
        return Err(Error::Dimension {
            context: "matmul inner dimension",
            expected: k,
            got: k2,
        });
    }
    let mut c = Mat::zeros(m, n);
    gemm_into(1.0, a, op_a, b, op_b, 0.0, &mut c)?;
    Ok(c)
}

/// `c = alpha · op(a) · op(b) + beta · c`
pub fn gemm_into(
    alpha: f64,
    a: &Mat,
    op_a: Op,
    b: &Mat,
    op_b: Op,
    beta: f64,
    c: &mut Mat,
) -> Result<()> {
    let (m, k) = a.op_shape(op_a);
    let (k2, n) = b.op_shape(op_b);
    check_dim("gemm inner dimension", k, k2)?;
    check_dim("gemm output rows", m, c.rows)?;
    check_dim("gemm output cols", n, c.cols)?;
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        c.scale(beta);
        return Ok(());
    }
    let (rsa, csa) = a.op_strides(op_a);
    let (rsb, csb) = b.op_strides(op_b);
    // SAFETY: the shapes and strides above describe exactly the storage of
    // `a`, `b` and `c`, which are distinct allocations (`c` is borrowed
    // mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        Mat::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn products_match_naive_for_all_transpose_combinations() {
        let a = Mat::from_fn(3, 5, |r, c| (r * 7 + c) as f64 * 0.3 - 2.0);
        let b = Mat::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 0.7);
        let expected = naive(&a, &b);
        let (at, bt) = (a.transpose(), b.transpose());
        for (x, ox, y, oy) in [
            (&a, Op::N, &b, Op::N),
            (&at, Op::T, &b, Op::N),
            (&a, Op::N, &bt, Op::T),
            (&at, Op::T, &bt, Op::T),
        ] {
            let got = matmul(x, ox, y, oy).unwrap();
            assert!(got.zip_map(&expected, |p, q| p - q).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 3);
        assert!(matches!(
            matmul(&a, Op::N, &b, Op::N),
            Err(Error::Dimension { .. })
        ));
        assert!(Mat::from_vec(2, 2, vec![1.0; 3]).is_err());
        let mut c = Mat::zeros(2, 2);
        assert!(c.axpy(1.0, &a).is_err());
    }

    #[test]
    fn broadcast_and_column_sums() {
        let mut m = Mat::zeros(3, 2);
        m.add_row_broadcast(&[1.0, -2.0]).unwrap();
        assert_eq!(m.column_sums(), vec![3.0, -6.0]);
    }
}
