//! Point estimators of the sample average treatment effect.
//!
//! Estimators only ever see [`ObservedData`]. The potential-outcome table
//! ([`ScienceTable`]) is simulation-side truth; the only bridge between the
//! two is [`ScienceTable::observe`], which reveals one outcome per unit.
//!
//! - [`tau_unadj`]: difference in means.
//! - [`tau_adj`]: regression adjustment with arm covariances
//!   `s_{X,Y(z)}` and the full-sample `S_X^2`.
//! - [`tau_db`]: `tau_adj` plus the leverage correction
//!   [`debias_correction`].
//! - [`tau_lin`], [`tau_lin_db`]: arm-wise OLS adjustment and its debiased
//!   version, via [`LinFit`].

use nalgebra::{DMatrix, DVector};

use crate::design::{build_hat_structure, Arm, Assignment, CovariateMatrix, HatStructure};
use crate::error::{Error, Result};
use crate::finitepop::{compensated_sum, empirical_mean};

/// Full potential-outcome table. Never passed to an estimator.
#[derive(Debug, Clone)]
pub struct ScienceTable {
    y1: Vec<f64>,
    y0: Vec<f64>,
    x: CovariateMatrix,
    hat: HatStructure,
}

impl ScienceTable {
    pub fn new(y1: Vec<f64>, y0: Vec<f64>, x: CovariateMatrix) -> Result<Self> {
        let hat = build_hat_structure(&x)?;
        Self::with_hat(y1, y0, x, hat)
    }

    pub fn with_hat(
        y1: Vec<f64>,
        y0: Vec<f64>,
        x: CovariateMatrix,
        hat: HatStructure,
    ) -> Result<Self> {
        let n = x.n();
        for len in [y1.len(), y0.len(), hat.n()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if let Some(i) = y1.iter().chain(&y0).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { y1, y0, x, hat })
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn outcomes(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Treated => &self.y1,
            Arm::Control => &self.y0,
        }
    }

    pub fn covariates(&self) -> &CovariateMatrix {
        &self.x
    }

    pub fn hat(&self) -> &HatStructure {
        &self.hat
    }

    /// Individual effects `Y_i(1) - Y_i(0)`.
    pub fn effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    /// The sample average treatment effect.
    pub fn tau_bar(&self) -> f64 {
        empirical_mean(&self.effects()).expect("table is nonempty")
    }

    /// Reveals `Y_i(Z_i)` for every unit.
    pub fn observe(&self, assignment: &Assignment) -> Result<ObservedData<'_>> {
        if assignment.n() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: assignment.n(),
            });
        }
        let y = assignment
            .indicators()
            .iter()
            .enumerate()
            .map(|(i, &t)| if t { self.y1[i] } else { self.y0[i] })
            .collect();
        ObservedData::new(y, assignment.clone(), &self.x, &self.hat)
    }
}

/// What an analyst sees: observed outcomes, the assignment and the
/// covariates (with their precomputed geometry).
#[derive(Debug, Clone)]
pub struct ObservedData<'a> {
    y: Vec<f64>,
    assignment: Assignment,
    x: &'a CovariateMatrix,
    hat: &'a HatStructure,
    arm_means: [f64; 2],
    deviations: Vec<f64>,
}

fn arm_slot(arm: Arm) -> usize {
    match arm {
        Arm::Treated => 0,
        Arm::Control => 1,
    }
}

impl<'a> ObservedData<'a> {
    pub fn new(
        y: Vec<f64>,
        assignment: Assignment,
        x: &'a CovariateMatrix,
        hat: &'a HatStructure,
    ) -> Result<Self> {
        let n = x.n();
        for len in [y.len(), assignment.n(), hat.n()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut arm_means = [0.0; 2];
        for arm in Arm::BOTH {
            let s = compensated_sum(assignment.units(arm).map(|i| y[i]));
            arm_means[arm_slot(arm)] = s / assignment.count(arm) as f64;
        }
        let deviations = (0..n)
            .map(|i| {
                let slot = if assignment.is_treated(i) { 0 } else { 1 };
                y[i] - arm_means[slot]
            })
            .collect();
        Ok(Self {
            y,
            assignment,
            x,
            hat,
            arm_means,
            deviations,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn covariates(&self) -> &CovariateMatrix {
        self.x
    }

    pub fn hat(&self) -> &HatStructure {
        self.hat
    }

    /// `Ybar_z` over the observed arm.
    pub fn arm_mean(&self, arm: Arm) -> f64 {
        self.arm_means[arm_slot(arm)]
    }

    /// `Y_i - Ybar_{Z_i}` for every unit.
    pub fn deviations(&self) -> &[f64] {
        &self.deviations
    }

    /// Deviations for units in `arm`, zero elsewhere.
    pub fn masked_deviations(&self, arm: Arm) -> Vec<f64> {
        let want = arm.indicator();
        self.assignment
            .indicators()
            .iter()
            .zip(&self.deviations)
            .map(|(&t, &d)| if t == want { d } else { 0.0 })
            .collect()
    }

    pub(crate) fn require_arm_size(&self, arm: Arm, needed: usize) -> Result<()> {
        let got = self.assignment.count(arm);
        if got < needed {
            return Err(Error::TooFew { needed, got });
        }
        Ok(())
    }

    /// Mean of centered covariate rows over `arm`, i.e. `Xbar_z - Xbar`.
    fn arm_covariate_shift(&self, arm: Arm) -> DVector<f64> {
        let xc = self.hat.centered_covariates();
        let p = xc.ncols();
        let nz = self.assignment.count(arm) as f64;
        DVector::from_iterator(
            p,
            (0..p).map(|j| compensated_sum(self.assignment.units(arm).map(|i| xc[(i, j)])) / nz),
        )
    }
}

pub fn tau_unadj(data: &ObservedData<'_>) -> f64 {
    data.arm_mean(Arm::Treated) - data.arm_mean(Arm::Control)
}

/// `S_X^{-2} s_{X,Y(z)}`, the arm covariance taken with divisor `n_z - 1`.
pub fn beta_hat_pooled(data: &ObservedData<'_>, arm: Arm) -> Result<DVector<f64>> {
    data.require_arm_size(arm, 2)?;
    let xc = data.hat.centered_covariates();
    let p = xc.ncols();
    let nz = data.assignment.count(arm);
    // sum over the arm of (X_i - Xbar) (Y_i - Ybar_z); the pooled centering
    // drops out because the deviations sum to zero within the arm
    let s = DVector::from_iterator(
        p,
        (0..p).map(|j| {
            compensated_sum(
                data.assignment
                    .units(arm)
                    .map(|i| xc[(i, j)] * data.deviations[i]),
            ) / (nz - 1) as f64
        }),
    );
    Ok(data.hat.solve_covariance(&s))
}

fn adjusted_arm_mean(data: &ObservedData<'_>, arm: Arm, beta: &DVector<f64>) -> f64 {
    data.arm_mean(arm) - beta.dot(&data.arm_covariate_shift(arm))
}

pub fn tau_adj(data: &ObservedData<'_>) -> Result<f64> {
    let b1 = beta_hat_pooled(data, Arm::Treated)?;
    let b0 = beta_hat_pooled(data, Arm::Control)?;
    Ok(adjusted_arm_mean(data, Arm::Treated, &b1) - adjusted_arm_mean(data, Arm::Control, &b0))
}

/// The leverage-weighted bias correction added to `tau_adj`.
///
/// Both arm terms are divided by their own `r_z^2`:
/// `r1 r0 [ n1^{-1} sum_{Z=1} H_ii (Y_i - Ybar_1) / r1^2
///        - n0^{-1} sum_{Z=0} H_ii (Y_i - Ybar_0) / r0^2 ]`.
pub fn debias_correction(data: &ObservedData<'_>) -> f64 {
    let lev = data.hat.leverages();
    let (r1, r0) = (data.assignment.r1(), data.assignment.r0());
    let arm_term = |arm: Arm| {
        let nz = data.assignment.count(arm) as f64;
        let rz = data.assignment.proportion(arm);
        compensated_sum(
            data.assignment
                .units(arm)
                .map(|i| lev[i] * data.deviations[i]),
        ) / (nz * rz * rz)
    };
    r1 * r0 * (arm_term(Arm::Treated) - arm_term(Arm::Control))
}

pub fn tau_db(data: &ObservedData<'_>) -> Result<f64> {
    Ok(tau_adj(data)? + debias_correction(data))
}

/// When `p` is this close to the Cholesky pivot spread the arm Gram is
/// treated as singular.
const ARM_CONDITION_THRESHOLD: f64 = 1e-12;

/// Arm-wise OLS fits used by the Lin-type estimators and HC3.
#[derive(Debug, Clone)]
pub struct LinFit {
    betas: [DVector<f64>; 2],
    /// `Y_i - Ybar_z - beta_z^T (X_i - Xbar_z)` for each unit in its own arm.
    residuals: Vec<f64>,
    tau_lin: f64,
}

fn cholesky_checked(
    gram: DMatrix<f64>,
    arm: Arm,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = gram.cholesky().ok_or_else(|| Error::ArmSingular {
        arm,
        reason: "covariate Gram matrix is not positive definite".into(),
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    let ratio = (lo * lo) / (hi * hi);
    if !(ratio >= ARM_CONDITION_THRESHOLD) {
        return Err(Error::ArmSingular {
            arm,
            reason: format!("pivot ratio {ratio:e} below {ARM_CONDITION_THRESHOLD:e}"),
        });
    }
    Ok(chol)
}

fn arm_rows(x: &DMatrix<f64>, units: &[usize], center: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(units.len(), x.ncols(), |r, j| x[(units[r], j)] - center[j])
}

impl LinFit {
    pub fn fit(data: &ObservedData<'_>) -> Result<Self> {
        let x = data.x.matrix();
        let p = x.ncols();
        let mut betas = [DVector::zeros(p), DVector::zeros(p)];
        let mut residuals = vec![0.0; data.n()];
        let mut tau = 0.0;
        let pooled_mean = data.hat.covariate_mean();
        for arm in Arm::BOTH {
            let units: Vec<usize> = data.assignment.units(arm).collect();
            let nz = units.len();
            if p >= nz {
                return Err(Error::ArmSingular {
                    arm,
                    reason: format!("p = {p} is not below the arm size {nz}"),
                });
            }
            let arm_mean = DVector::from_iterator(
                p,
                (0..p).map(|j| compensated_sum(units.iter().map(|&i| x[(i, j)])) / nz as f64),
            );
            let xa = arm_rows(x, &units, &arm_mean);
            let dev = DVector::from_iterator(nz, units.iter().map(|&i| data.deviations[i]));
            let chol = cholesky_checked(xa.tr_mul(&xa), arm)?;
            let beta = chol.solve(&xa.tr_mul(&dev));
            let fitted = &xa * &beta;
            for (r, &i) in units.iter().enumerate() {
                residuals[i] = dev[r] - fitted[r];
            }
            let shift = &arm_mean - pooled_mean;
            let adjusted = data.arm_mean(arm) - beta.dot(&shift);
            tau += if arm.indicator() { adjusted } else { -adjusted };
            betas[arm_slot(arm)] = beta;
        }
        Ok(Self {
            betas,
            residuals,
            tau_lin: tau,
        })
    }

    pub fn beta(&self, arm: Arm) -> &DVector<f64> {
        &self.betas[arm_slot(arm)]
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn tau_lin(&self) -> f64 {
        self.tau_lin
    }

    /// `tau_lin + (n0/n1^2) sum_{Z=1} H_ii e_i(1) - (n1/n0^2) sum_{Z=0} H_ii e_i(0)`
    /// with the full-sample leverages `H_ii`.
    pub fn tau_lin_db(&self, data: &ObservedData<'_>) -> f64 {
        let lev = data.hat.leverages();
        let a = &data.assignment;
        let (n1, n0) = (a.n1() as f64, a.n0() as f64);
        let s1 = compensated_sum(a.units(Arm::Treated).map(|i| lev[i] * self.residuals[i]));
        let s0 = compensated_sum(a.units(Arm::Control).map(|i| lev[i] * self.residuals[i]));
        self.tau_lin + n0 / (n1 * n1) * s1 - n1 / (n0 * n0) * s0
    }

    /// HC3 variance on the per-observation scale, so that the interval is
    /// `tau +/- z sqrt(v / n)` like every other pairing.
    ///
    /// Arm leverages use the full-sample mean:
    /// `H_ii,z = (X_i - Xbar)^T {sum_{j in z} (X_j - Xbar)(X_j - Xbar)^T}^{-1} (X_i - Xbar)`.
    pub fn hc3(&self, data: &ObservedData<'_>) -> Result<f64> {
        let xc = data.hat.centered_covariates();
        let p = xc.ncols();
        let n = data.n() as f64;
        let zero = DVector::zeros(p);
        let mut total = 0.0;
        for arm in Arm::BOTH {
            data.require_arm_size(arm, 2)?;
            let units: Vec<usize> = data.assignment.units(arm).collect();
            let nz = units.len();
            if p > nz {
                return Err(Error::ArmSingular {
                    arm,
                    reason: format!("p = {p} exceeds the arm size {nz}"),
                });
            }
            let xa = arm_rows(xc, &units, &zero);
            let chol = cholesky_checked(xa.tr_mul(&xa), arm)?;
            let w = chol
                .l_dirty()
                .solve_lower_triangular(&xa.transpose())
                .ok_or_else(|| Error::ArmSingular {
                    arm,
                    reason: "triangular solve failed".into(),
                })?;
            let mut acc = Vec::with_capacity(nz);
            for (r, &i) in units.iter().enumerate() {
                let lev = w.column(r).norm_squared();
                if lev >= 1.0 - 1e-10 {
                    return Err(Error::LeverageAtOne {
                        arm,
                        unit: i,
                        leverage: lev,
                    });
                }
                let e = self.residuals[i];
                acc.push(e * e / ((1.0 - lev) * (1.0 - lev)));
            }
            total += n / ((nz - 1) as f64 * nz as f64) * compensated_sum(acc);
        }
        Ok(total)
    }
}

pub fn tau_lin(data: &ObservedData<'_>) -> Result<f64> {
    Ok(LinFit::fit(data)?.tau_lin())
}

pub fn tau_lin_db(data: &ObservedData<'_>) -> Result<f64> {
    Ok(LinFit::fit(data)?.tau_lin_db(data))
}
