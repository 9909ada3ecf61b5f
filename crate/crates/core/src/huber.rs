//! Huber loss and the pseudo-data construction that lets a squared-loss
//! completer minimize a Huber-loss objective.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::{DenseMatrix, ObservationMask};

/// Huber cutoff `c`: quadratic loss inside `[-c, c]`, linear outside.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HuberCutoff(f64);

impl HuberCutoff {
    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(Self(c))
        } else {
            Err(invalid(
                "cutoff",
                format!("must be positive and finite, got {c}"),
            ))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for HuberCutoff {
    type Error = crate::Error;

    fn try_from(c: f64) -> Result<Self> {
        Self::new(c)
    }
}

impl From<HuberCutoff> for f64 {
    fn from(c: HuberCutoff) -> f64 {
        c.0
    }
}

/// `rho_c(x) = x²` for `|x| <= c`, `c(2|x| - c)` beyond.
#[inline]
pub fn rho(x: f64, c: f64) -> f64 {
    let a = x.abs();
    if a <= c {
        x * x
    } else {
        c * (2.0 * a - c)
    }
}

/// Derivative of [`rho`]: `2x` clipped to `[-2c, 2c]`.
#[inline]
pub fn psi(x: f64, c: f64) -> f64 {
    2.0 * x.clamp(-c, c)
}

/// `sum_ij rho_c(m_ij)`.
pub fn huber_norm_sq(m: &DenseMatrix, c: f64) -> f64 {
    m.as_slice().iter().map(|&x| rho(x, c)).sum()
}

/// Pseudo data `Z = P(Y) + psi_c(P(X) - P(Y)) / 2`, supported on the mask.
///
/// Inside the quadratic zone the observed value is copied verbatim rather
/// than recomputed as `y + (x - y)`, so that a cutoff above every residual
/// reproduces the plain completion problem bit for bit.
pub fn pseudo_data(
    x_obs: &DenseMatrix,
    y_cur: &DenseMatrix,
    mask: &ObservationMask,
    c: f64,
) -> Result<DenseMatrix> {
    x_obs.check_same_shape(y_cur)?;
    if mask.shape() != x_obs.shape() {
        return Err(crate::Error::DimensionMismatch {
            expected: x_obs.shape(),
            found: mask.shape(),
        });
    }
    if !(c > 0.0) {
        return Err(invalid("cutoff", format!("must be positive, got {c}")));
    }
    let bits = mask.as_bits();
    let (rows, cols) = x_obs.shape();
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| {
        if !bits[i * cols + j] {
            return 0.0;
        }
        let x = x_obs[(i, j)];
        let y = y_cur[(i, j)];
        let e = x - y;
        if e > c {
            y + c
        } else if e < -c {
            y - c
        } else {
            x
        }
    }))
}

/// Minimizer of `(x - s)²/2 + c|s|`: shrink toward zero by `c`.
#[inline]
pub fn soft_threshold_scalar(x: f64, c: f64) -> f64 {
    if x > c {
        x - c
    } else if x < -c {
        x + c
    } else {
        0.0
    }
}

/// Cutoff `gamma / sqrt(max(n_rows, n_cols) * observed_fraction)`.
pub fn choose_cutoff(
    gamma: f64,
    n_rows: usize,
    n_cols: usize,
    observed_fraction: f64,
) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    if !(observed_fraction > 0.0 && observed_fraction <= 1.0) {
        return Err(invalid(
            "observed_fraction",
            format!("must lie in (0, 1], got {observed_fraction}"),
        ));
    }
    let n = n_rows.max(n_cols);
    if n == 0 {
        return Err(invalid("n_rows", "matrix dimensions must be positive"));
    }
    Ok(gamma / (n as f64 * observed_fraction).sqrt())
}
