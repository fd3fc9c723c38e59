//! Covariate geometry and treatment assignment.
//!
//! [`HatStructure`] holds the projection onto the span of the centered
//! covariates,
//!
//! ```text
//! H_ij = (n-1)^{-1} (X_i - Xbar)^T S_X^{-2} (X_j - Xbar)
//! ```
//!
//! together with the matrices built from it:
//!
//! - `Q_ij = H_ij^2` off the diagonal and `Q_ii = H_ii - H_ii^2`,
//! - `M = (I - 11^T/n) - H + (I - 11^T/n) diag{H}`,
//! - `B = M^T M`.
//!
//! Everything is dense and computed once per covariate matrix.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted eigenvalue ratio of `S_X^2`.
pub const CONDITION_THRESHOLD: f64 = 1e-12;

/// Largest number of assignments [`enumerate_assignments`] will produce.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Treated, Arm::Control];

    pub fn indicator(self) -> bool {
        matches!(self, Arm::Treated)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Treated => "treated",
            Arm::Control => "control",
        })
    }
}

/// `n x p` covariate matrix with `1 <= p < n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    x: DMatrix<f64>,
}

impl CovariateMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 {
            return Err(Error::InvalidParameter(
                "covariate matrix has no columns".into(),
            ));
        }
        if p >= n {
            return Err(Error::InvalidParameter(format!(
                "need p < n, got p = {p}, n = {n}"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { x })
    }

    /// Builds from row-major data.
    pub fn from_rows(n: usize, p: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, p, data))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct HatStructure {
    n: usize,
    p: usize,
    h: DMatrix<f64>,
    leverages: DVector<f64>,
    pub(crate) q: DMatrix<f64>,
    m: DMatrix<f64>,
    pub(crate) b: DMatrix<f64>,
    x_mean: DVector<f64>,
    centered: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

/// Computes `H` and the derived matrices.
///
/// `S_X^2` is factored once (Cholesky) and applied by triangular solves.
pub fn build_hat_structure(x: &CovariateMatrix) -> Result<HatStructure> {
    let (n, p) = (x.n(), x.p());
    let xm = x.matrix();
    let x_mean = DVector::from_iterator(p, (0..p).map(|j| xm.column(j).mean()));
    let mut centered = xm.clone();
    for j in 0..p {
        let mu = x_mean[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= mu);
    }

    let sx2 = centered.tr_mul(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(sx2.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= CONDITION_THRESHOLD) {
        return Err(Error::Singular {
            ratio,
            threshold: CONDITION_THRESHOLD,
        });
    }
    let factor = sx2.cholesky().ok_or(Error::Singular {
        ratio,
        threshold: CONDITION_THRESHOLD,
    })?;

    // W = L^{-1} Xc^T, so H = W^T W / (n-1)
    let w = factor
        .l()
        .solve_lower_triangular(&centered.transpose())
        .ok_or(Error::Singular {
            ratio,
            threshold: CONDITION_THRESHOLD,
        })?;
    let mut h = w.tr_mul(&w) / (n - 1) as f64;
    symmetrize(&mut h);

    let leverages = h.diagonal();
    let q = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            h[(i, i)] - h[(i, i)] * h[(i, i)]
        } else {
            h[(i, j)] * h[(i, j)]
        }
    });
    let inv_n = 1.0 / n as f64;
    let m = DMatrix::from_fn(n, n, |i, j| {
        let c = if i == j { 1.0 - inv_n } else { -inv_n };
        c - h[(i, j)] + c * leverages[j]
    });
    let mut b = m.tr_mul(&m);
    symmetrize(&mut b);

    Ok(HatStructure {
        n,
        p,
        h,
        leverages,
        q,
        m,
        b,
        x_mean,
        centered,
        factor,
    })
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

impl HatStructure {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `p / n`.
    pub fn alpha(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn leverages(&self) -> &DVector<f64> {
        &self.leverages
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn covariate_mean(&self) -> &DVector<f64> {
        &self.x_mean
    }

    /// `X - 1 Xbar^T`.
    pub fn centered_covariates(&self) -> &DMatrix<f64> {
        &self.centered
    }

    /// Solves `S_X^2 beta = rhs` with the stored factorization.
    pub fn solve_covariance(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }
}

/// A completely randomized assignment with both arms nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    z: Vec<bool>,
    n1: usize,
}

impl Assignment {
    pub fn new(z: Vec<bool>) -> Result<Self> {
        let n1 = z.iter().filter(|&&t| t).count();
        if n1 == 0 || n1 == z.len() {
            return Err(Error::InvalidAssignment(format!(
                "both arms must be nonempty (n = {}, n1 = {n1})",
                z.len()
            )));
        }
        Ok(Self { z, n1 })
    }

    pub fn indicators(&self) -> &[bool] {
        &self.z
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i]
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.z.len() - self.n1
    }

    pub fn count(&self, arm: Arm) -> usize {
        match arm {
            Arm::Treated => self.n1(),
            Arm::Control => self.n0(),
        }
    }

    pub fn r1(&self) -> f64 {
        self.n1 as f64 / self.z.len() as f64
    }

    pub fn r0(&self) -> f64 {
        1.0 - self.r1()
    }

    pub fn proportion(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Treated => self.r1(),
            Arm::Control => self.r0(),
        }
    }

    pub fn units(&self, arm: Arm) -> impl Iterator<Item = usize> + '_ {
        let want = arm.indicator();
        self.z
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t == want)
            .map(|(i, _)| i)
    }

    /// Bit string with `1` for treated units, e.g. `"0110"`.
    pub fn bits(&self) -> String {
        self.z.iter().map(|&t| if t { '1' } else { '0' }).collect()
    }
}

fn check_sizes(n: usize, n1: usize) -> Result<()> {
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidAssignment(format!(
            "need 0 < n1 < n, got n = {n}, n1 = {n1}"
        )));
    }
    Ok(())
}

/// Draws `n1` of `n` units uniformly at random.
pub fn complete_randomization<R: Rng + ?Sized>(
    n: usize,
    n1: usize,
    rng: &mut R,
) -> Result<Assignment> {
    check_sizes(n, n1)?;
    let mut z = vec![false; n];
    for i in rand::seq::index::sample(rng, n, n1) {
        z[i] = true;
    }
    Ok(Assignment { z, n1 })
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Iterator over every assignment of `n1` treated units out of `n`.
///
/// Treated index sets are produced in lexicographic order, so for `n = 3`,
/// `n1 = 1` the assignments are `100`, `010`, `001`.
#[derive(Debug, Clone)]
pub struct Assignments {
    n: usize,
    chosen: Vec<usize>,
    done: bool,
}

pub fn enumerate_assignments(n: usize, n1: usize) -> Result<Assignments> {
    check_sizes(n, n1)?;
    let count = binomial(n, n1);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(Assignments {
        n,
        chosen: (0..n1).collect(),
        done: false,
    })
}

impl Iterator for Assignments {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        if self.done {
            return None;
        }
        let mut z = vec![false; self.n];
        for &i in &self.chosen {
            z[i] = true;
        }
        let out = Assignment {
            z,
            n1: self.chosen.len(),
        };

        let k = self.chosen.len();
        match (0..k).rev().find(|&i| self.chosen[i] < self.n - k + i) {
            Some(i) => {
                self.chosen[i] += 1;
                for j in (i + 1)..k {
                    self.chosen[j] = self.chosen[j - 1] + 1;
                }
            }
            None => self.done = true,
        }
        Some(out)
    }
}
