//! Finite-population moment algebra.
//!
//! The `S` family (variance, covariance and their matrix-weighted versions)
//! divides by `n - 1`. [`scale`] standardizes with the population second
//! moment and so divides by `n`. The two conventions are intentionally
//! different and must not be mixed.
//!
//! For a weight matrix `A` the scaled covariance is
//!
//! ```text
//! S_{A,a,b} = (n-1)^{-1} sum_i sum_j A_ij (a_i - mean(a)) (b_j - mean(b))
//! ```
//!
//! which is evaluated as a quadratic form on centered vectors, with the
//! outer reduction compensated.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense `n x n` weight matrix.
pub type WeightMatrix = DMatrix<f64>;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn check_finite(a: &[f64]) -> Result<()> {
    match a.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_square(a: &WeightMatrix, n: usize) -> Result<()> {
    check_len(n, a.nrows())?;
    check_len(n, a.ncols())
}

pub fn empirical_mean(a: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    check_finite(a)?;
    Ok(compensated_sum(a.iter().copied()) / a.len() as f64)
}

/// Returns `a - mean(a)`.
pub fn centered(a: &[f64]) -> Result<Vec<f64>> {
    let m = empirical_mean(a)?;
    Ok(a.iter().map(|v| v - m).collect())
}

fn at_least_two(a: &[f64]) -> Result<()> {
    if a.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: a.len(),
        });
    }
    Ok(())
}

/// `S^2_a`, divisor `n - 1`.
pub fn sample_variance(a: &[f64]) -> Result<f64> {
    at_least_two(a)?;
    let c = centered(a)?;
    Ok(dot(&c, &c) / (a.len() - 1) as f64)
}

/// `S_{a,b}`, divisor `n - 1`.
pub fn sample_covariance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    at_least_two(a)?;
    let ca = centered(a)?;
    let cb = centered(b)?;
    Ok(dot(&ca, &cb) / (a.len() - 1) as f64)
}

/// `u^T A v` for raw (uncentered) vectors.
pub fn quadratic_form(a: &WeightMatrix, u: &[f64], v: &[f64]) -> f64 {
    let av = a * DVector::from_column_slice(v);
    dot(u, av.as_slice())
}

/// `S^2_{A,a}`.
pub fn scaled_variance(a_mat: &WeightMatrix, a: &[f64]) -> Result<f64> {
    scaled_covariance(a_mat, a, a)
}

/// `S_{A,a,b}`.
pub fn scaled_covariance(a_mat: &WeightMatrix, a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_square(a_mat, a.len())?;
    at_least_two(a)?;
    let ca = centered(a)?;
    let cb = centered(b)?;
    Ok(quadratic_form(a_mat, &ca, &cb) / (a.len() - 1) as f64)
}

/// `S_{diag{A},a,b}` without materializing the diagonal matrix.
pub fn scaled_covariance_diag(a_mat: &WeightMatrix, a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_square(a_mat, a.len())?;
    at_least_two(a)?;
    let ca = centered(a)?;
    let cb = centered(b)?;
    let s = compensated_sum((0..a.len()).map(|i| a_mat[(i, i)] * ca[i] * cb[i]));
    Ok(s / (a.len() - 1) as f64)
}

/// `S_{diag^-{A},a,b}` without materializing the hollow matrix.
pub fn scaled_covariance_offdiag(a_mat: &WeightMatrix, a: &[f64], b: &[f64]) -> Result<f64> {
    let full = scaled_covariance(a_mat, a, b)?;
    Ok(full - scaled_covariance_diag(a_mat, a, b)?)
}

/// Splits `A` into `(diag{A}, diag^-{A})`.
pub fn diag_split(a: &WeightMatrix) -> (WeightMatrix, WeightMatrix) {
    let n = a.nrows().min(a.ncols());
    let mut diag = DMatrix::zeros(a.nrows(), a.ncols());
    let mut hollow = a.clone();
    for i in 0..n {
        diag[(i, i)] = a[(i, i)];
        hollow[(i, i)] = 0.0;
    }
    (diag, hollow)
}

/// Standardizes to mean zero and population second moment one:
/// `(a_i - mean) / sqrt(sum (a_j - mean)^2 / n)`.
pub fn scale(a: &[f64]) -> Result<Vec<f64>> {
    let c = centered(a)?;
    let sd = (dot(&c, &c) / a.len() as f64).sqrt();
    // spread at roundoff level of the input magnitude counts as constant
    if !(sd > 1e-14 * max_abs(a)) {
        return Err(Error::ZeroSpread);
    }
    Ok(c.into_iter().map(|v| v / sd).collect())
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
