//! Dense row-major `f64` matrices and the handful of decompositions the
//! analyses need.

use crate::error::{Error, Result};
use crate::par;

/// A dense, row-major, finite-valued real matrix with at least one row and
/// one column.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Internal constructor for values already known to satisfy the
    /// invariants (derived from finite inputs by finite arithmetic).
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert!(rows > 0 && cols > 0 && data.len() == rows * cols);
        Self { rows, cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Row-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_parts(self.cols, self.rows, data)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = vec![0.0; self.rows * n];
        par::fill_rows(&mut out, n, |i, out_row| {
            // i-k-j order keeps the inner loop contiguous in both operands.
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        });
        Ok(Matrix::from_parts(self.rows, n, out))
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot subtract {}x{} from {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Subtracts each column's mean from that column.
    pub fn center_columns(&self) -> Matrix {
        let means = self.column_means();
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.cols) {
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        Matrix::from_parts(self.rows, self.cols, data)
    }

    /// Gathers the given rows (in the given order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        if indices.is_empty() {
            return Err(Error::EmptyMatrix {
                rows: 0,
                cols: self.cols,
            });
        }
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::DimensionMismatch(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix::from_parts(indices.len(), self.cols, data))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn hconcat(parts: &[&Matrix]) -> Result<Matrix> {
        let first = parts.first().ok_or(Error::EmptyMatrix { rows: 0, cols: 0 })?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate {} rows with {rows} rows",
                bad.rows
            )));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Matrix::from_parts(rows, cols, data))
    }

    /// Thin singular value decomposition `A = U diag(s) Vᵀ` with
    /// `r = min(rows, cols)` components, singular values sorted
    /// nonincreasing.
    ///
    /// Each left singular vector is sign-normalized so that its
    /// largest-magnitude entry is positive (the matching right vector is
    /// flipped with it), which makes the decomposition deterministic.
    pub fn svd(&self) -> Result<Svd> {
        let a = faer::Mat::<f64>::from_fn(self.rows, self.cols, |i, j| self.get(i, j));
        let svd = a.thin_svd().map_err(|_| Error::NonConvergence("SVD"))?;
        let (u, s, v) = (svd.U(), svd.S(), svd.V());
        let r = s.dim();

        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));

        let m = self.rows;
        let p = self.cols;
        let mut left = vec![0.0; m * r];
        let mut right = vec![0.0; p * r];
        let mut values = Vec::with_capacity(r);
        for (k, &src) in order.iter().enumerate() {
            let col: Vec<f64> = (0..self.rows).map(|i| u[(i, src)]).collect();
            let pivot = col
                .iter()
                .copied()
                .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..m {
                left[i * r + k] = sign * col[i];
            }
            for j in 0..p {
                right[j * r + k] = sign * v[(j, src)];
            }
            values.push(s[src].max(0.0));
        }

        Ok(Svd {
            left: Matrix::from_parts(m, r, left),
            singular_values: values,
            right: Matrix::from_parts(p, r, right),
        })
    }
}

/// Thin SVD factors. Columns of `left` (m×r) and `right` (p×r) are
/// orthonormal; `singular_values` is nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd {
    pub left: Matrix,
    pub singular_values: Vec<f64>,
    pub right: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// The `k`-th left singular vector.
    pub fn left_vector(&self, k: usize) -> Vec<f64> {
        self.left.column(k)
    }

    pub fn reconstruct(&self) -> Matrix {
        let m = self.left.rows();
        let p = self.right.rows();
        let r = self.rank();
        let mut data = vec![0.0; m * p];
        for i in 0..m {
            let u = self.left.row(i);
            for j in 0..p {
                let v = self.right.row(j);
                data[i * p + j] = (0..r).map(|k| u[k] * self.singular_values[k] * v[k]).sum();
            }
        }
        Matrix::from_parts(m, p, data)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
