//! Dense third-order tensors and their mode-k algebra.
//!
//! A [`Tensor3`] of dims `(n1, n2, n3)` stores entry `x[i1, i2, i3]` at offset
//! `i1 + n1 * i2 + n1 * n2 * i3`. In words: the first spatial index runs
//! fastest and every frontal slice (band) is contiguous. With this layout the
//! mode-3 unfolding `X_(3)` (an `n3 × n1 n2` matrix) is the transpose of a
//! column-major `n1 n2 × n3` matrix over the same buffer, so it can be viewed
//! without copying.
//!
//! Index convention: modes are named 1, 2, 3 as in the mathematical notation;
//! every entry, fiber and band index in this crate is 0-based.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{shape_err, Error, Result};

/// Dense real matrix. Unfoldings, spectral bases and gradients use it.
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

fn check_mode(mode: usize) -> Result<()> {
    if (1..=3).contains(&mode) {
        Ok(())
    } else {
        Err(Error::InvalidMode(mode))
    }
}

/// Number of columns of the mode-k unfolding and the column index of an entry.
///
/// Column `j = Σ_{l≠k} i_l Π_{m<l, m≠k} n_m` (0-based form of the usual
/// 1-based rule), so the lower remaining mode runs fastest.
fn unfold_column(dims: [usize; 3], mode: usize, idx: [usize; 3]) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for l in 0..3 {
        if l + 1 == mode {
            continue;
        }
        col += idx[l] * stride;
        stride *= dims[l];
    }
    col
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let dims = [dims.0, dims.1, dims.2];
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(shape_err(
                format!("{len} entries for dims {dims:?}"),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        assert!(dims.0 > 0 && dims.1 > 0 && dims.2 > 0, "tensor dims must be positive");
        Self {
            dims: [dims.0, dims.1, dims.2],
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    t.data[i + dims.0 * (j + dims.1 * k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Builds a tensor from its mode-3 view: an `n1 n2 × n3` matrix whose
    /// column `k` is band `k`.
    pub(crate) fn from_mode3_transposed(n1: usize, n2: usize, m: Matrix) -> Self {
        debug_assert_eq!(m.nrows(), n1 * n2);
        let n3 = m.ncols();
        Self {
            dims: [n1, n2, n3],
            data: m.data.into(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dims[0], self.dims[1], self.dims[2])
    }

    /// Number of spatial positions `n1 · n2`.
    pub fn pixels(&self) -> usize {
        self.dims[0] * self.dims[1]
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Mode-k unfolding `X_(k)`, an `n_k × Π_{j≠k} n_j` matrix.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        check_mode(mode)?;
        let [n1, n2, n3] = self.dims;
        let rows = self.dims[mode - 1];
        let cols = self.len() / rows;
        let mut m = Matrix::zeros(rows, cols);
        for k in 0..n3 {
            for j in 0..n2 {
                for i in 0..n1 {
                    let idx = [i, j, k];
                    let col = unfold_column(self.dims, mode, idx);
                    m[(idx[mode - 1], col)] = self.data[i + n1 * (j + n2 * k)];
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: &Matrix, mode: usize, dims: (usize, usize, usize)) -> Result<Self> {
        check_mode(mode)?;
        let d = [dims.0, dims.1, dims.2];
        let rows = d[mode - 1];
        let cols: usize = d.iter().product::<usize>() / rows.max(1);
        if m.nrows() != rows || m.ncols() != cols || d.contains(&0) {
            return Err(shape_err(
                format!("{rows}×{cols} for mode {mode} of {d:?}"),
                format!("{}×{}", m.nrows(), m.ncols()),
            ));
        }
        let mut t = Self::zeros(dims);
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let idx = [i, j, k];
                    let col = unfold_column(d, mode, idx);
                    t.data[i + d[0] * (j + d[1] * k)] = m[(idx[mode - 1], col)];
                }
            }
        }
        Ok(t)
    }

    /// Zero-copy view of `X_(3)ᵀ`: an `n1 n2 × n3` matrix, one band per column.
    pub fn mode3_view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.pixels(), self.dims[2])
    }

    pub fn mode3_view_mut(&mut self) -> DMatrixViewMut<'_, f64> {
        let (p, n3) = (self.pixels(), self.dims[2]);
        DMatrixViewMut::from_slice(&mut self.data, p, n3)
    }

    /// Mode-3 product `Z ×₃ Y` for `Z` of dims `(n1, n2, r)` and `Y` of shape
    /// `n3 × r`; in unfolded form `X_(3) = Y Z_(3)`.
    pub fn mode3_product(&self, y: &Matrix) -> Result<Self> {
        if y.ncols() != self.dims[2] {
            return Err(shape_err(
                format!("matrix with {} columns", self.dims[2]),
                format!("{}×{}", y.nrows(), y.ncols()),
            ));
        }
        // X_(3)ᵀ = Z_(3)ᵀ Yᵀ
        let out = self.mode3_view() * y.transpose();
        Ok(Self::from_mode3_transposed(self.dims[0], self.dims[1], out))
    }

    /// Contraction with the transpose of `e`: `X ×₃ Eᵀ`, i.e. the tensor whose
    /// mode-3 unfolding is `Eᵀ X_(3)`. For `e` of shape `n3 × r` the result has
    /// dims `(n1, n2, r)`.
    pub fn mode3_contract(&self, e: &Matrix) -> Result<Self> {
        if e.nrows() != self.dims[2] {
            return Err(shape_err(
                format!("matrix with {} rows", self.dims[2]),
                format!("{}×{}", e.nrows(), e.ncols()),
            ));
        }
        let out = self.mode3_view() * e;
        Ok(Self::from_mode3_transposed(self.dims[0], self.dims[1], out))
    }

    /// Mode-3 fiber `x[i, j, :]`.
    pub fn fiber3(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        if i >= self.dims[0] || j >= self.dims[1] {
            return Err(Error::IndexOutOfRange {
                index: vec![i, j],
                dims: self.dims[..2].to_vec(),
            });
        }
        let p = self.pixels();
        let base = i + self.dims[0] * j;
        Ok((0..self.dims[2]).map(|k| self.data[base + p * k]).collect())
    }

    /// Band (frontal slice) `k` as a contiguous slice, first index fastest.
    pub fn band(&self, k: usize) -> &[f64] {
        let p = self.pixels();
        &self.data[k * p..(k + 1) * p]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut [f64] {
        let p = self.pixels();
        &mut self.data[k * p..(k + 1) * p]
    }

    /// `‖s_{ij:}‖₂` for every pixel, in storage order.
    pub fn fiber_norms(&self) -> Vec<f64> {
        let p = self.pixels();
        let mut acc = vec![0.0; p];
        for band in self.data.chunks_exact(p) {
            for (a, v) in acc.iter_mut().zip(band) {
                *a += v * v;
            }
        }
        acc.iter_mut().for_each(|a| *a = a.sqrt());
        acc
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// `‖self − other‖_F`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Entrywise `a · self + b · other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err(format!("{:?}", self.dims), format!("{:?}", other.dims)));
        }
        Ok(())
    }
}
