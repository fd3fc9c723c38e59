//! Variances, plug-in variance estimators and confidence intervals.
//!
//! Oracle quantities take the [`ScienceTable`] and a treated proportion
//! `r1`; plug-in quantities only take [`ObservedData`]. Every variance is
//! on the per-observation scale, so an interval is `tau +/- z sqrt(v / n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{Arm, HatStructure};
use crate::error::{Error, Result};
use crate::estimators::{ObservedData, ScienceTable};
use crate::finitepop::{
    centered, compensated_sum, dot, sample_covariance, sample_variance, scaled_covariance,
    scaled_covariance_diag, scaled_covariance_offdiag, scaled_variance, WeightMatrix,
};

/// Projection residuals and leverage terms of a science table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub e1: Vec<f64>,
    pub e0: Vec<f64>,
    pub s1: Vec<f64>,
    pub s0: Vec<f64>,
    pub tau_e: Vec<f64>,
    pub tau_s: Vec<f64>,
}

fn projection_residual(hat: &HatStructure, y: &[f64]) -> Result<Vec<f64>> {
    let c = DVector::from_vec(centered(y)?);
    let fitted = hat.h() * &c;
    Ok((c - fitted).iter().copied().collect())
}

fn leverage_term(hat: &HatStructure, y: &[f64]) -> Result<Vec<f64>> {
    let c = centered(y)?;
    let raw: Vec<f64> = c
        .iter()
        .zip(hat.leverages().iter())
        .map(|(a, h)| a * h)
        .collect();
    centered(&raw)
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `e(z) = (I - H)(Y(z) - Ybar(z))` and `s_i(z) = H_ii (Y_i(z) - Ybar(z))`
/// recentred.
pub fn residuals(table: &ScienceTable) -> Result<ResidualSet> {
    let hat = table.hat();
    let e1 = projection_residual(hat, table.y1())?;
    let e0 = projection_residual(hat, table.y0())?;
    let s1 = leverage_term(hat, table.y1())?;
    let s0 = leverage_term(hat, table.y0())?;
    let tau_e = difference(&e1, &e0);
    let tau_s = difference(&s1, &s0);
    Ok(ResidualSet {
        e1,
        e0,
        s1,
        s0,
        tau_e,
        tau_s,
    })
}

fn check_proportion(r1: f64) -> Result<f64> {
    if !(r1 > 0.0 && r1 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "treated proportion {r1} outside (0, 1)"
        )));
    }
    Ok(1.0 - r1)
}

fn weighted_sum(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

fn completely_randomized_variance(r1: f64, y1: &[f64], y0: &[f64]) -> Result<f64> {
    let r0 = 1.0 - r1;
    Ok(sample_variance(y1)? / r1 + sample_variance(y0)? / r0
        - sample_variance(&difference(y1, y0))?)
}

/// Oracle variances of a science table at treated proportion `r1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleVariances {
    pub sigma_cre2: f64,
    pub sigma_adj2: f64,
    pub sigma_hd_l2: f64,
    pub sigma_hd_q2: f64,
    pub sigma_hd2: f64,
    pub r_squared: f64,
    pub s_tau2: f64,
    /// `S^2_{e(1)-e(0)}`.
    pub s_tau_e2: f64,
    /// `S^2_{diag{H}, Y(1)-Y(0)}`.
    pub s_diag_h_tau2: f64,
}

pub fn oracle_variances(table: &ScienceTable, r1: f64) -> Result<OracleVariances> {
    let r0 = check_proportion(r1)?;
    let res = residuals(table)?;
    let hat = table.hat();
    let (y1, y0) = (table.y1(), table.y0());
    let tau = table.effects();

    let sigma_cre2 = completely_randomized_variance(r1, y1, y0)?;
    let sigma_adj2 = completely_randomized_variance(r1, &res.e1, &res.e0)?;
    let es1: Vec<f64> = weighted_sum(&res.e1, 1.0, &res.s1, 1.0);
    let es0: Vec<f64> = weighted_sum(&res.e0, 1.0, &res.s0, 1.0);
    let sigma_hd_l2 = completely_randomized_variance(r1, &es1, &es0)?;
    let quad = weighted_sum(y1, 1.0 / (r1 * r1), y0, -1.0 / (r0 * r0));
    let sigma_hd_q2 = (r1 * r0).powi(2) * scaled_variance(hat.q(), &quad)?;

    let r_squared = if sigma_cre2 > 0.0 {
        1.0 - sigma_adj2 / sigma_cre2
    } else {
        f64::NAN
    };
    let diag_h = DMatrix::from_diagonal(hat.leverages());
    Ok(OracleVariances {
        sigma_cre2,
        sigma_adj2,
        sigma_hd_l2,
        sigma_hd_q2,
        sigma_hd2: sigma_hd_l2 + sigma_hd_q2,
        r_squared,
        s_tau2: sample_variance(&tau)?,
        s_tau_e2: sample_variance(&res.tau_e)?,
        s_diag_h_tau2: scaled_variance(&diag_h, &tau)?,
    })
}

/// `r1 r0 S^2_{B, Y(1)/r1 + Y(0)/r0}`, an equivalent closed form of
/// `sigma_hd_l2`.
pub fn sigma_hd_l2_via_b(table: &ScienceTable, r1: f64) -> Result<f64> {
    let r0 = check_proportion(r1)?;
    let v = weighted_sum(table.y1(), 1.0 / r1, table.y0(), 1.0 / r0);
    Ok(r1 * r0 * scaled_variance(table.hat().b(), &v)?)
}

/// The four-way split of `sigma_hd2` into diagonal / off-diagonal and
/// same-arm / cross-arm parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
}

impl VarianceComponents {
    pub fn total(&self) -> f64 {
        self.i1 + self.i2 + self.i3 + self.i4
    }
}

pub fn variance_components(table: &ScienceTable, r1: f64) -> Result<VarianceComponents> {
    let r0 = check_proportion(r1)?;
    let hat = table.hat();
    let (b, q) = (hat.b(), hat.q());
    let rz = [(r1, table.y1()), (r0, table.y0())];
    let mut i1 = 0.0;
    let mut i2 = 0.0;
    for (r, y) in rz {
        let w_q = r1 * r0 / r.powi(4);
        let w_b = 1.0 / (r * r);
        i1 += w_q * scaled_covariance_diag(q, y, y)? + w_b * scaled_covariance_diag(b, y, y)?;
        i2 += w_q * scaled_covariance_offdiag(q, y, y)? + w_b * scaled_covariance_offdiag(b, y, y)?;
    }
    let (y1, y0) = (table.y1(), table.y0());
    Ok(VarianceComponents {
        i1: r1 * r0 * i1,
        i2: r1 * r0 * i2,
        i3: 2.0 * scaled_covariance_diag(b, y1, y0)? - 2.0 * scaled_covariance_diag(q, y1, y0)?,
        i4: 2.0 * scaled_covariance_offdiag(b, y1, y0)?
            - 2.0 * scaled_covariance_offdiag(q, y1, y0)?,
    })
}

/// Leading-order expansion of `I3`:
/// `sum_z (S^2_{diag B,Y(z)} - S^2_{diag Q,Y(z)} - S^2_{diag^- H,Y(z)})
///  + 2 S_{diag^- H,Y(1),Y(0)} - S^2_{diag H,tau} - S^2_{e(1)-e(0)}`.
/// `I3` minus this is `O(1/n)`.
pub fn i3_expansion(table: &ScienceTable) -> Result<f64> {
    let hat = table.hat();
    let (y1, y0) = (table.y1(), table.y0());
    let res = residuals(table)?;
    let diag_h = DMatrix::from_diagonal(hat.leverages());
    let mut acc = 0.0;
    for y in [y1, y0] {
        acc += scaled_covariance_diag(hat.b(), y, y)?
            - scaled_covariance_diag(hat.q(), y, y)?
            - scaled_covariance_offdiag(hat.h(), y, y)?;
    }
    acc += 2.0 * scaled_covariance_offdiag(hat.h(), y1, y0)?;
    Ok(acc - scaled_variance(&diag_h, &table.effects())? - sample_variance(&res.tau_e)?)
}

/// Thresholds on `R^2` for the debiased estimator to beat the difference in
/// means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBounds {
    pub necessary: f64,
    pub sufficient: f64,
    /// Present only for balanced designs, `r1 = 1/2`.
    pub rl2: Option<f64>,
}

/// `(alpha^2 + 2 alpha) / (1 + 2 alpha)`.
pub fn necessary_r2(alpha: f64) -> f64 {
    (alpha * alpha + 2.0 * alpha) / (1.0 + 2.0 * alpha)
}

/// `R_L^2` as a function of `alpha = p/n` and
/// `gamma = S^2_tau / (2 S^2_{(Y(1)+Y(0))/2})`.
pub fn rl2(alpha: f64, gamma: f64) -> f64 {
    necessary_r2(alpha) + alpha * (1.0 - alpha) / (1.0 + 2.0 * alpha) * gamma
}

pub fn rl2_curve(alphas: &[f64], gamma: f64) -> Vec<f64> {
    alphas.iter().map(|&a| rl2(a, gamma)).collect()
}

pub fn efficiency_bounds(table: &ScienceTable, r1: f64) -> Result<EfficiencyBounds> {
    let r0 = check_proportion(r1)?;
    let alpha = table.hat().alpha();
    let (y1, y0) = (table.y1(), table.y0());
    let num = sample_variance(&weighted_sum(y1, 1.0 / (r1 * r1), y0, -1.0 / (r0 * r0)))?;
    let den = sample_variance(&weighted_sum(y1, 1.0 / r1, y0, 1.0 / r0))?;
    if !(den > 0.0) {
        return Err(Error::ZeroSpread);
    }
    let necessary = necessary_r2(alpha);
    let sufficient =
        necessary + 2.0 * r1 * r0 * alpha * (1.0 - alpha) / (1.0 + 2.0 * alpha) * num / den;
    let rl2 = if (r1 - 0.5).abs() < 1e-12 {
        let avg = weighted_sum(y1, 0.5, y0, 0.5);
        let gamma = sample_variance(&table.effects())? / (2.0 * sample_variance(&avg)?);
        Some(rl2(alpha, gamma))
    } else {
        None
    };
    Ok(EfficiencyBounds {
        necessary,
        sufficient,
        rl2,
    })
}

fn arm_index(arm: Arm) -> usize {
    match arm {
        Arm::Treated => 0,
        Arm::Control => 1,
    }
}

struct MaskedDeviations {
    u: [DVector<f64>; 2],
    n_z: [f64; 2],
    r_z: [f64; 2],
    n: f64,
}

impl MaskedDeviations {
    fn new(data: &ObservedData<'_>) -> Self {
        let a = data.assignment();
        Self {
            u: [
                DVector::from_vec(data.masked_deviations(Arm::Treated)),
                DVector::from_vec(data.masked_deviations(Arm::Control)),
            ],
            n_z: [a.n1() as f64, a.n0() as f64],
            r_z: [a.r1(), a.r0()],
            n: a.n() as f64,
        }
    }

    fn diag(&self, d: &WeightMatrix, k: usize) -> f64 {
        let u = &self.u[k];
        compensated_sum((0..u.len()).map(|i| d[(i, i)] * u[i] * u[i])) / self.n_z[k]
    }

    /// Per-arm quadratic moments of `d` from two matrix-vector products.
    fn moments(&self, d: &WeightMatrix) -> MomentTargets {
        let du = [d * &self.u[0], d * &self.u[1]];
        let mut diag = [0.0; 2];
        let mut off = [0.0; 2];
        for k in 0..2 {
            diag[k] = self.diag(d, k);
            let full = dot(self.u[k].as_slice(), du[k].as_slice());
            off[k] = (full - diag[k] * self.n_z[k]) / (self.r_z[k] * self.n_z[k]);
        }
        // the supports of u1 and u0 are disjoint, so no i = j terms appear
        let cross =
            dot(self.u[0].as_slice(), du[1].as_slice()) / (self.n * self.r_z[0] * self.r_z[1]);
        MomentTargets { diag, off, cross }
    }
}

fn check_weight(d: &WeightMatrix, n: usize) -> Result<()> {
    if d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: d.nrows(),
        });
    }
    Ok(())
}

/// `n_z^{-1} sum_{Z_i = z} D_ii (c (Y_i - Ybar_z))^2`. Only the diagonal of
/// `d` is read.
pub fn sample_diag_quadratic(
    d: &WeightMatrix,
    data: &ObservedData<'_>,
    arm: Arm,
    scale_out: f64,
) -> Result<f64> {
    check_weight(d, data.n())?;
    data.require_arm_size(arm, 1)?;
    let m = MaskedDeviations::new(data);
    Ok(scale_out * scale_out * m.diag(d, arm_index(arm)))
}

/// `(r_z n_z)^{-1} sum_{i != j, Z_i = Z_j = z} D_ij c^2 (Y_i - Ybar_z)(Y_j - Ybar_z)`.
/// The diagonal of `d` is ignored.
pub fn sample_offdiag_quadratic(
    d: &WeightMatrix,
    data: &ObservedData<'_>,
    arm: Arm,
    scale_out: f64,
) -> Result<f64> {
    check_weight(d, data.n())?;
    data.require_arm_size(arm, 2)?;
    let m = MaskedDeviations::new(data);
    Ok(scale_out * scale_out * m.moments(d).off[arm_index(arm)])
}

/// `(n r1 r0)^{-1} sum_{Z_i = 1, Z_j = 0} D_ij (Y_i - Ybar_1)(Y_j - Ybar_0)`.
pub fn sample_cross_offdiag(d: &WeightMatrix, data: &ObservedData<'_>) -> Result<f64> {
    check_weight(d, data.n())?;
    let m = MaskedDeviations::new(data);
    Ok(m.moments(d).cross)
}

/// Plug-in estimates of the four variance components and the three
/// combined estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub i1: f64,
    pub i2: f64,
    pub i3ub: f64,
    pub i3ub_prime: f64,
    pub i4: f64,
    pub sigma_hat2: f64,
    pub sigma_prime_hat2: f64,
    /// `min(sigma_hat2, sigma_prime_hat2)`, clamped at zero.
    pub sigma_cb2: f64,
    /// Set when the minimum was negative and has been clamped.
    pub clamped: bool,
}

pub fn estimate_variance(data: &ObservedData<'_>) -> Result<VarianceEstimate> {
    for arm in Arm::BOTH {
        data.require_arm_size(arm, 2)?;
    }
    let hat = data.hat();
    let m = MaskedDeviations::new(data);
    Ok(combine_moments(
        m.r_z[0],
        &m.moments(hat.h()),
        &m.moments(hat.b()),
        &m.moments(hat.q()),
    ))
}

/// Assembles the variance estimates from the plug-in moments of `H`, `B`
/// and `Q`. Every component is linear in the moments.
pub fn combine_moments(
    r1: f64,
    h: &MomentTargets,
    b: &MomentTargets,
    q: &MomentTargets,
) -> VarianceEstimate {
    let r0 = 1.0 - r1;
    let mut i1 = 0.0;
    let mut i2 = 0.0;
    let mut i3ub_prime = 0.0;
    let mut i3_off = 0.0;
    for (k, r) in [r1, r0].into_iter().enumerate() {
        let w_q = r1 * r0 / r.powi(4);
        let w_b = 1.0 / (r * r);
        i1 += w_q * q.diag[k] + w_b * b.diag[k];
        i2 += w_q * q.off[k] + w_b * b.off[k];
        i3ub_prime += b.diag[k] - q.diag[k];
        i3_off += h.off[k];
    }
    let i1 = r1 * r0 * i1;
    let i2 = r1 * r0 * i2;
    let i3ub = i3ub_prime - i3_off + 2.0 * h.cross;
    let i4 = 2.0 * (b.cross - q.cross);

    let sigma_hat2 = i1 + i2 + i3ub + i4;
    let sigma_prime_hat2 = i1 + i2 + i3ub_prime + i4;
    // ties go to sigma_hat2
    let min = if sigma_prime_hat2 < sigma_hat2 {
        sigma_prime_hat2
    } else {
        sigma_hat2
    };
    VarianceEstimate {
        i1,
        i2,
        i3ub,
        i3ub_prime,
        i4,
        sigma_hat2,
        sigma_prime_hat2,
        sigma_cb2: min.max(0.0),
        clamped: min < 0.0,
    }
}

/// HC3 variance of the arm-wise OLS estimators; see
/// [`crate::estimators::LinFit::hc3`].
pub fn hc3_variance(data: &ObservedData<'_>) -> Result<f64> {
    crate::estimators::LinFit::fit(data)?.hc3(data)
}

/// `n (s^2_1 / n1 + s^2_0 / n0)` with arm sample variances.
pub fn neyman_variance_unadj(data: &ObservedData<'_>) -> Result<f64> {
    let a = data.assignment();
    let n = a.n() as f64;
    let mut total = 0.0;
    for arm in Arm::BOTH {
        data.require_arm_size(arm, 2)?;
        let nz = a.count(arm) as f64;
        let ss = compensated_sum(a.units(arm).map(|i| data.deviations()[i].powi(2)));
        total += ss / (nz - 1.0) / nz;
    }
    Ok(n * total)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `point -/+ z_{1 - level/2} sqrt(variance / n)`.
pub fn wald_ci(point: f64, variance: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if variance < 0.0 || variance.is_nan() {
        return Err(Error::NegativeVariance(variance));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level {level} outside (0, 1)"
        )));
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    let half = normal_quantile(1.0 - level / 2.0) * (variance / n as f64).sqrt();
    Ok((point - half, point + half))
}

/// Empirical correlation `S_{a,b} / (S_a S_b)`.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(sample_covariance(a, b)? / (sample_variance(a)? * sample_variance(b)?).sqrt())
}

/// Science-table values the plug-in moments of `d` estimate.
pub fn oracle_moment_targets(d: &WeightMatrix, table: &ScienceTable) -> Result<MomentTargets> {
    let (y1, y0) = (table.y1(), table.y0());
    Ok(MomentTargets {
        diag: [
            scaled_covariance_diag(d, y1, y1)?,
            scaled_covariance_diag(d, y0, y0)?,
        ],
        off: [
            scaled_covariance_offdiag(d, y1, y1)?,
            scaled_covariance_offdiag(d, y0, y0)?,
        ],
        cross: scaled_covariance(d, y1, y0)? - scaled_covariance_diag(d, y1, y0)?,
    })
}

/// Quadratic moments of a weight matrix, indexed treated then control:
/// same-arm diagonal and off-diagonal parts and the cross-arm part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentTargets {
    pub diag: [f64; 2],
    pub off: [f64; 2],
    pub cross: f64,
}
