//! Dense matrices, observation masks and the spectral operators built on them.
//!
//! Everything here is a pure function of its inputs. The singular value
//! decomposition is delegated to `faer`; callers that need to count
//! decompositions (the solvers do) keep their own counters.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Sub};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative cutoff below which singular values count as zero when reporting rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Real-valued matrix stored in row-major order.
///
/// Public constructors reject non-finite entries. Zero-sized matrices only
/// appear as factors of a rank-0 decomposition.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape {
                rows,
                cols,
                reason: "both dimensions must be positive".into(),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                reason: format!("expected {} entries, got {}", rows * cols, data.len()),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
                value: data[k],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix entry by entry. The closure must return finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub fn from_diagonal(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (k, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(k, k)] = d;
        }
        m
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: (self.cols, rhs.cols),
                found: rhs.shape(),
            });
        }
        let product = to_faer(self) * to_faer(rhs);
        Ok(from_faer(product.as_ref()))
    }

    /// Sum of elementwise products, `trace(selfᵀ rhs)`.
    pub fn inner(&self, rhs: &DenseMatrix) -> f64 {
        debug_assert_eq!(self.shape(), rhs.shape());
        self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, rhs: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix shapes differ");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;

    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;

    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

/// The set of observed positions of an `n_rows x n_cols` grid.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
    count: usize,
}

impl ObservationMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            observed: vec![true; rows * cols],
            count: rows * cols,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                observed.push(f(i, j));
            }
        }
        let count = observed.iter().filter(|&&b| b).count();
        Self {
            rows,
            cols,
            observed,
            count,
        }
    }

    /// Builds a mask from zero-based `(row, col)` pairs. Out-of-range and
    /// repeated pairs are rejected.
    pub fn from_pairs(
        rows: usize,
        cols: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut observed = vec![false; rows * cols];
        let mut count = 0;
        for (row, col) in pairs {
            if row >= rows || col >= cols {
                return Err(Error::IndexOutOfBounds {
                    row,
                    col,
                    rows,
                    cols,
                });
            }
            let slot = &mut observed[row * cols + col];
            if *slot {
                return Err(Error::DuplicateIndex { row, col });
            }
            *slot = true;
            count += 1;
        }
        Ok(Self {
            rows,
            cols,
            observed,
            count,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols && self.observed[row * self.cols + col]
    }

    /// Observed flags in row-major order.
    pub fn as_bits(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_fraction(&self) -> f64 {
        self.count as f64 / (self.rows * self.cols) as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            observed: self.observed.iter().map(|b| !b).collect(),
            count: self.rows * self.cols - self.count,
        }
    }

    /// Observed pairs in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / cols, k % cols))
    }

    fn check_matches(&self, m: &DenseMatrix) -> Result<()> {
        if self.shape() != m.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                found: m.shape(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for ObservationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ObservationMask {}x{} ({} observed)",
            self.rows, self.cols, self.count
        )
    }
}

/// Observed data: values on the mask, zeros elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    values: DenseMatrix,
    mask: ObservationMask,
}

impl Problem {
    /// Projects `data` onto `mask`, so values off the mask never leak into a solver.
    pub fn new(data: &DenseMatrix, mask: ObservationMask) -> Result<Self> {
        let values = project(data, &mask)?;
        Ok(Self { values, mask })
    }

    /// Like [`Problem::new`] but also rejects an empty mask.
    pub fn solvable(data: &DenseMatrix, mask: ObservationMask) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        Self::new(data, mask)
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Same mask, different observed values.
    pub fn with_values(&self, data: &DenseMatrix) -> Result<Self> {
        Self::new(data, self.mask.clone())
    }
}

/// Thin singular value decomposition `m = U diag(s) Vᵀ`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Number of singular values above `tol` times the largest one.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        numerical_rank(&self.singular_values, tol)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let n1 = self.u.n_rows();
        let n2 = self.v.n_rows();
        let mut out = DenseMatrix::zeros(n1, n2);
        for (k, &s) in self.singular_values.iter().enumerate() {
            for i in 0..n1 {
                let a = s * self.u[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n2 {
                    out[(i, j)] += a * self.v[(j, k)];
                }
            }
        }
        out
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> SvdFactors {
        let r = r.min(self.rank());
        SvdFactors {
            u: DenseMatrix::from_fn(self.u.n_rows(), r, |i, j| self.u[(i, j)]),
            singular_values: self.singular_values[..r].to_vec(),
            v: DenseMatrix::from_fn(self.v.n_rows(), r, |i, j| self.v[(i, j)]),
        }
    }
}

pub(crate) fn numerical_rank(values: &[f64], tol: f64) -> usize {
    let top = values.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > tol * top).count()
}

pub fn project(m: &DenseMatrix, mask: &ObservationMask) -> Result<DenseMatrix> {
    mask.check_matches(m)?;
    Ok(DenseMatrix {
        rows: m.rows,
        cols: m.cols,
        data: m
            .data
            .iter()
            .zip(&mask.observed)
            .map(|(&v, &obs)| if obs { v } else { 0.0 })
            .collect(),
    })
}

pub fn project_complement(m: &DenseMatrix, mask: &ObservationMask) -> Result<DenseMatrix> {
    mask.check_matches(m)?;
    Ok(DenseMatrix {
        rows: m.rows,
        cols: m.cols,
        data: m
            .data
            .iter()
            .zip(&mask.observed)
            .map(|(&v, &obs)| if obs { 0.0 } else { v })
            .collect(),
    })
}

/// `on` at observed positions, `off` elsewhere.
pub(crate) fn merge_on_mask(
    on: &DenseMatrix,
    off: &DenseMatrix,
    mask: &ObservationMask,
) -> DenseMatrix {
    DenseMatrix {
        rows: on.rows,
        cols: on.cols,
        data: on
            .data
            .iter()
            .zip(&off.data)
            .zip(&mask.observed)
            .map(|((&a, &b), &obs)| if obs { a } else { b })
            .collect(),
    }
}

pub fn frobenius_norm_sq(m: &DenseMatrix) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(svd(m)?.singular_values.iter().sum())
}

pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(svd(m)?.singular_values.first().copied().unwrap_or(0.0))
}

pub fn svd(m: &DenseMatrix) -> Result<SvdFactors> {
    let (n1, n2) = m.shape();
    if m.is_zero() {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(n1, 0),
            singular_values: Vec::new(),
            v: DenseMatrix::zeros(n2, 0),
        });
    }
    let dec = to_faer(m).thin_svd().map_err(|_| Error::SvdFailed)?;
    let s = dec.S().column_vector();
    let r = n1.min(n2);
    let mut order: Vec<usize> = (0..r).collect();
    // faer already returns non-increasing values; the sort only guards the contract.
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = dec.U();
    let v = dec.V();
    Ok(SvdFactors {
        u: DenseMatrix::from_fn(n1, r, |i, k| u[(i, order[k])]),
        singular_values: order.iter().map(|&k| s[k].max(0.0)).collect(),
        v: DenseMatrix::from_fn(n2, r, |j, k| v[(j, order[k])]),
    })
}

/// Result of shrinking the spectrum of a matrix.
#[derive(Clone, Debug)]
pub struct Shrinkage {
    pub matrix: DenseMatrix,
    /// Strictly positive shrunk singular values `(d_i - gamma)`, non-increasing.
    pub singular_values: Vec<f64>,
}

impl Shrinkage {
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values, RANK_TOLERANCE)
    }
}

/// `U diag((d - gamma)_+) Vᵀ`, keeping the shrunk spectrum alongside the matrix.
pub fn shrink_spectrum(m: &DenseMatrix, gamma: f64) -> Result<Shrinkage> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid(
            "gamma",
            format!("must be finite and >= 0, got {gamma}"),
        ));
    }
    let (n1, n2) = m.shape();
    if m.is_zero() {
        return Ok(Shrinkage {
            matrix: DenseMatrix::zeros(n1, n2),
            singular_values: Vec::new(),
        });
    }
    let dec = to_faer(m).thin_svd().map_err(|_| Error::SvdFailed)?;
    let s = dec.S().column_vector();
    let mut keep: Vec<(usize, f64)> = (0..n1.min(n2))
        .map(|k| (k, s[k] - gamma))
        .filter(|&(_, d)| d > 0.0)
        .collect();
    keep.sort_by(|a, b| b.1.total_cmp(&a.1));
    let singular_values: Vec<f64> = keep.iter().map(|&(_, d)| d).collect();
    if gamma == 0.0 {
        // S_0 is the identity; skip the round trip through the factors.
        return Ok(Shrinkage {
            matrix: m.clone(),
            singular_values,
        });
    }
    if keep.is_empty() {
        return Ok(Shrinkage {
            matrix: DenseMatrix::zeros(n1, n2),
            singular_values,
        });
    }
    let u = dec.U();
    let v = dec.V();
    let k = keep.len();
    let scaled_u = Mat::<f64>::from_fn(n1, k, |i, c| u[(i, keep[c].0)] * keep[c].1);
    let kept_v = Mat::<f64>::from_fn(n2, k, |j, c| v[(j, keep[c].0)]);
    let product = scaled_u * kept_v.transpose();
    Ok(Shrinkage {
        matrix: from_faer(product.as_ref()),
        singular_values,
    })
}

/// Singular value soft-thresholding: the proximal map of `gamma * ||.||_*`.
pub fn svd_soft_threshold(m: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    Ok(shrink_spectrum(m, gamma)?.matrix)
}

pub(crate) fn to_faer(m: &DenseMatrix) -> Mat<f64> {
    Mat::from_fn(m.rows, m.cols, |i, j| m.data[i * m.cols + j])
}

pub(crate) fn from_faer(m: faer::MatRef<'_, f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}
