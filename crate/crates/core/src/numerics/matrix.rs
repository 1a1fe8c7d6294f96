//! Dense row-major f64 matrix.
//!
//! `matmul` is backed by `matrixmultiply::dgemm`, which is an order of
//! magnitude faster than a naive loop on this workload; the tests pin its
//! output against a straight triple loop. Summation order along the shared
//! dimension is fixed by the kernel, so results are bit-reproducible run to
//! run.

use super::NumericsError;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![v; rows * cols],
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
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Invalid(format!(
                "from_vec: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Single row vector (1 x n).
    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    /// Single column vector (n x 1).
    pub fn col_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: data.len(),
            cols: 1,
            data,
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Matrix product via dgemm.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        if self.rows == 0 || rhs.cols == 0 || self.cols == 0 {
            return Ok(out);
        }
        unsafe {
            matrixmultiply::dgemm(
                self.rows,
                self.cols,
                rhs.cols,
                1.0,
                self.data.as_ptr(),
                self.cols as isize,
                1,
                rhs.data.as_ptr(),
                rhs.cols as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                rhs.cols as isize,
                1,
            );
        }
        Ok(out)
    }

    /// self · rhsᵀ without materializing the transpose (rhs passed to dgemm
    /// with swapped strides). Shapes: (m x k) · (n x k)ᵀ -> m x n.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != rhs.cols {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_nt",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        if self.rows == 0 || rhs.rows == 0 || self.cols == 0 {
            return Ok(out);
        }
        unsafe {
            matrixmultiply::dgemm(
                self.rows,
                self.cols,
                rhs.rows,
                1.0,
                self.data.as_ptr(),
                self.cols as isize,
                1,
                rhs.data.as_ptr(),
                1,
                rhs.cols as isize,
                0.0,
                out.data.as_mut_ptr(),
                rhs.rows as isize,
                1,
            );
        }
        Ok(out)
    }

    /// selfᵀ · rhs without materializing the transpose.
    /// Shapes: (k x m)ᵀ · (k x n) -> m x n.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        if self.rows != rhs.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_tn",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        if self.cols == 0 || rhs.cols == 0 || self.rows == 0 {
            return Ok(out);
        }
        unsafe {
            matrixmultiply::dgemm(
                self.cols,
                self.rows,
                rhs.cols,
                1.0,
                self.data.as_ptr(),
                1,
                self.cols as isize,
                rhs.data.as_ptr(),
                rhs.cols as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                rhs.cols as isize,
                1,
            );
        }
        Ok(out)
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

    fn zip(
        &self,
        rhs: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, NumericsError> {
        if self.shape() != rhs.shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip(rhs, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip(rhs, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, rhs: &Matrix) -> Result<(), NumericsError> {
        if self.shape() != rhs.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_assign",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds a 1 x cols row vector to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Matrix, NumericsError> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: row.rows,
                rhs_cols: row.cols,
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let base = r * self.cols;
            for c in 0..self.cols {
                out.data[base + c] += row.data[c];
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max |a - b| over corresponding entries; panics on shape mismatch
    /// (test/diagnostic helper).
    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
