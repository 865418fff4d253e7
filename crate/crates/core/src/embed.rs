//! Complex matrices and their real block embeddings.
//!
//! A complex row `h` embeds as `[Re h, Im h]` and a complex matrix `P` as
//!
//! ```text
//! [  Re P   Im P ]
//! [ -Im P   Re P ]
//! ```
//!
//! so that `embed_row(h) * embed_matrix(P) == embed_row(h * P)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the tied-block structure of an embedded matrix.
pub const BLOCK_TIE_TOL: f64 = 1e-9;

/// Dense complex matrix with finite entries and non-zero dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComplexMatrix", into = "RawComplexMatrix")]
pub struct ComplexMatrix {
    inner: DMatrix<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if rows * cols != entries.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_dmatrix(inner: DMatrix<Complex64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::Dimension("matrix dimensions must be positive".into()));
        }
        if inner.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("complex matrix"));
        }
        Ok(Self { inner })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix dimensions must be positive");
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.inner[(row, col)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<Complex64> {
        &self.inner
    }

    pub fn into_dmatrix(self) -> DMatrix<Complex64> {
        self.inner
    }

    /// Row `i` as an owned vector of entries.
    pub fn row(&self, i: usize) -> Vec<Complex64> {
        self.inner.row(i).iter().copied().collect()
    }

    /// Squared Frobenius norm, `tr(A^H A)`.
    pub fn frobenius_sq(&self) -> f64 {
        self.inner.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Matrix product; panics on mismatched inner dimensions.
    pub fn mul(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.ncols(), rhs.nrows(), "inner dimension mismatch");
        ComplexMatrix {
            inner: &self.inner * &rhs.inner,
        }
    }

    /// Row vector times matrix.
    pub fn row_times(row: &[Complex64], m: &ComplexMatrix) -> Vec<Complex64> {
        assert_eq!(row.len(), m.nrows(), "row length mismatch");
        (0..m.ncols())
            .map(|j| row.iter().enumerate().map(|(i, r)| r * m.inner[(i, j)]).sum())
            .collect()
    }

    /// `m v` for a column vector `v`.
    pub fn row_times_col(m: &ComplexMatrix, v: &[Complex64]) -> Vec<Complex64> {
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m.get(r, c) * v[c]).sum())
            .collect()
    }

    /// Returns the matrix with its rows reordered so that row `p` of the
    /// result is row `order[p]` of `self`.
    pub fn permute_rows(&self, order: &[usize]) -> ComplexMatrix {
        assert_eq!(order.len(), self.nrows());
        let inner = DMatrix::from_fn(self.nrows(), self.ncols(), |r, c| self.inner[(order[r], c)]);
        ComplexMatrix { inner }
    }
}

#[derive(Serialize, Deserialize)]
struct RawComplexMatrix {
    rows: usize,
    cols: usize,
    /// Row-major `[re, im]` pairs.
    entries: Vec<[f64; 2]>,
}

impl TryFrom<RawComplexMatrix> for ComplexMatrix {
    type Error = Error;

    fn try_from(raw: RawComplexMatrix) -> Result<Self> {
        let entries: Vec<Complex64> = raw
            .entries
            .iter()
            .map(|[re, im]| Complex64::new(*re, *im))
            .collect();
        ComplexMatrix::from_row_slice(raw.rows, raw.cols, &entries)
    }
}

impl From<ComplexMatrix> for RawComplexMatrix {
    fn from(m: ComplexMatrix) -> Self {
        let mut entries = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m.get(i, j);
                entries.push([z.re, z.im]);
            }
        }
        RawComplexMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }
}

/// Real embedding `[Re h, Im h]` of a complex row of length `N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealEmbeddedRow(DVector<f64>);

impl RealEmbeddedRow {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if !values.len().is_multiple_of(2) || values.is_empty() {
            return Err(Error::Dimension(format!(
                "embedded row length must be even and positive, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedded row"));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    /// Number of transmit antennas `N_t`.
    pub fn antennas(&self) -> usize {
        self.0.len() / 2
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        let n = self.antennas();
        (0..n).map(|i| Complex64::new(self.0[i], self.0[n + i])).collect()
    }

    /// Row-vector product with an embedded matrix.
    pub fn times(&self, m: &RealEmbeddedMatrix) -> DVector<f64> {
        assert_eq!(self.len(), m.as_matrix().nrows(), "row length mismatch");
        m.as_matrix().tr_mul(&self.0)
    }
}

/// The `2N_t x 2K` block embedding of a complex `N_t x K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealEmbeddedMatrix(DMatrix<f64>);

impl RealEmbeddedMatrix {
    /// Wraps a real matrix after checking the tied block structure.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.nrows().is_multiple_of(2) || !m.ncols().is_multiple_of(2) || m.is_empty() {
            return Err(Error::Dimension(format!(
                "embedded matrix must have even dimensions, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedded matrix"));
        }
        let residual = block_tie_residual(&m);
        if residual > BLOCK_TIE_TOL {
            return Err(Error::BlockTie {
                residual,
                tolerance: BLOCK_TIE_TOL,
            });
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn antennas(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn streams(&self) -> usize {
        self.0.ncols() / 2
    }
}

/// Largest absolute deviation from the `[[A, B], [-B, A]]` pattern.
pub fn block_tie_residual(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows() / 2;
    let k = m.ncols() / 2;
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..k {
            worst = worst.max((m[(i, j)] - m[(n + i, k + j)]).abs());
            worst = worst.max((m[(i, k + j)] + m[(n + i, j)]).abs());
        }
    }
    worst
}

pub fn embed_row(h: &[Complex64]) -> RealEmbeddedRow {
    let n = h.len();
    assert!(n > 0, "empty row");
    let v = DVector::from_fn(2 * n, |i, _| if i < n { h[i].re } else { h[i - n].im });
    RealEmbeddedRow(v)
}

pub fn embed_matrix(p: &ComplexMatrix) -> RealEmbeddedMatrix {
    let (n, k) = (p.nrows(), p.ncols());
    let m = DMatrix::from_fn(2 * n, 2 * k, |r, c| {
        let z = p.get(r % n, c % k);
        match (r < n, c < k) {
            (true, true) | (false, false) => z.re,
            (true, false) => z.im,
            (false, true) => -z.im,
        }
    });
    RealEmbeddedMatrix(m)
}

/// Inverse of [`embed_matrix`]. Rejects matrices whose duplicated blocks
/// disagree by more than [`BLOCK_TIE_TOL`].
pub fn unembed_matrix(m: &DMatrix<f64>) -> Result<ComplexMatrix> {
    let checked = RealEmbeddedMatrix::new(m.clone())?;
    let n = checked.antennas();
    let k = checked.streams();
    let inner = DMatrix::from_fn(n, k, |i, j| {
        // Average the tied copies.
        let re = 0.5 * (m[(i, j)] + m[(n + i, k + j)]);
        let im = 0.5 * (m[(i, k + j)] - m[(n + i, j)]);
        Complex64::new(re, im)
    });
    ComplexMatrix::from_dmatrix(inner)
}
