//! Seeded simulation populations.
//!
//! A [`BaseTables`] draw fixes an `n x n` covariate pool, coefficient
//! vectors `beta` and `Delta`, and arm intercepts. A [`CellConfig`] then
//! selects the first `p` covariate columns and builds
//!
//! ```text
//! Y_i(z) = mu_z + Scale(X_i^T beta_z) + eps_i(z) / sqrt(gamma),
//! beta_1 = beta[..p] + delta Delta[..p],  beta_0 = beta[..p] - delta Delta[..p].
//! ```
//!
//! All heavy-tailed draws go through inverse CDFs evaluated in plain
//! arithmetic, so tables are bit-identical for a given seed.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{build_hat_structure, CovariateMatrix, HatStructure};
use crate::error::{Error, Result};
use crate::estimators::ScienceTable;
use crate::finitepop::scale;
use crate::rng::{key_of, open_unit, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    T3,
    Cauchy,
}

impl Distribution {
    pub fn quantile(self, u: f64) -> f64 {
        match self {
            Distribution::T3 => t3_quantile(u),
            Distribution::Cauchy => cauchy_quantile(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }

    pub fn name(self) -> &'static str {
        match self {
            Distribution::T3 => "t3",
            Distribution::Cauchy => "cauchy",
        }
    }

    fn code(self) -> u64 {
        match self {
            Distribution::T3 => 1,
            Distribution::Cauchy => 2,
        }
    }
}

pub fn cauchy_quantile(u: f64) -> f64 {
    (PI * (u - 0.5)).tan()
}

/// CDF of the Student t distribution with three degrees of freedom.
pub fn t3_cdf(t: f64) -> f64 {
    let x = t / 3f64.sqrt();
    0.5 + (x / (1.0 + x * x) + x.atan()) / PI
}

/// `psi - sin(psi)`, with a series near zero where the subtraction cancels.
fn psi_minus_sin(psi: f64) -> f64 {
    if psi < 0.1 {
        let p2 = psi * psi;
        psi * p2 / 6.0 * (1.0 - p2 / 20.0 * (1.0 - p2 / 42.0 * (1.0 - p2 / 72.0)))
    } else {
        psi - psi.sin()
    }
}

/// Quantile of the t3 distribution.
///
/// With `x = t / sqrt(3)` and `psi = 2 atan(1/x)` the upper tail is
/// `(psi - sin psi) / (2 pi)`, so the quantile solves a monotone scalar
/// equation on `[0, pi]`, done here by Newton steps kept inside a
/// shrinking bracket.
pub fn t3_quantile(u: f64) -> f64 {
    if u.is_nan() || !(0.0..=1.0).contains(&u) {
        return f64::NAN;
    }
    if u == 0.0 {
        return f64::NEG_INFINITY;
    }
    if u == 1.0 {
        return f64::INFINITY;
    }
    if u == 0.5 {
        return 0.0;
    }
    let tail = if u < 0.5 { u } else { 1.0 - u };
    let target = 2.0 * PI * tail;
    let (mut lo, mut hi) = (0.0_f64, PI);
    let mut psi = (6.0 * target).cbrt().min(PI);
    for _ in 0..100 {
        let g = psi_minus_sin(psi) - target;
        if g > 0.0 {
            hi = psi;
        } else {
            lo = psi;
        }
        // 1 - cos(psi) without cancellation
        let slope = 2.0 * (0.5 * psi).sin().powi(2);
        let mut next = psi - g / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - psi).abs();
        psi = next;
        if step <= 4.0 * f64::EPSILON * psi {
            break;
        }
    }
    let t = 3f64.sqrt() / (0.5 * psi).tan();
    if u < 0.5 {
        -t
    } else {
        t
    }
}

/// Fixed draws shared by every cell of a factorial run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTables {
    pub calx: DMatrix<f64>,
    pub beta: Vec<f64>,
    pub delta_vec: Vec<f64>,
    pub mu1: f64,
    pub mu0: f64,
    pub seed: u64,
    pub dist: Distribution,
}

impl BaseTables {
    pub fn n(&self) -> usize {
        self.beta.len()
    }
}

// stream families
const BASE_COVARIATES: u64 = 1;
const BASE_BETA: u64 = 2;
const BASE_DELTA: u64 = 3;
const BASE_MU: u64 = 4;
const RESIDUAL: u64 = 5;
const TRANS: u64 = 6;

fn draws(dist: Distribution, seed: u64, family: u64, len: usize) -> Vec<f64> {
    let mut rng = substream(seed, key_of(&[family, dist.code()]), 0);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

pub fn gen_base_tables(n: usize, dist: Distribution, seed: u64) -> Result<BaseTables> {
    if n < 4 {
        return Err(Error::TooFew { needed: 4, got: n });
    }
    let pool = draws(dist, seed, BASE_COVARIATES, n * n);
    let mu = draws(dist, seed, BASE_MU, 2);
    Ok(BaseTables {
        calx: DMatrix::from_row_slice(n, n, &pool),
        beta: draws(dist, seed, BASE_BETA, n),
        delta_vec: draws(dist, seed, BASE_DELTA, n),
        mu1: mu[0],
        mu0: mu[1],
        seed,
        dist,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    WorstCase,
    T3,
    Cauchy,
}

impl ResidualKind {
    fn code(self) -> u64 {
        match self {
            ResidualKind::WorstCase => 1,
            ResidualKind::T3 => 2,
            ResidualKind::Cauchy => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::WorstCase => "worst_case",
            ResidualKind::T3 => "t3",
            ResidualKind::Cauchy => "cauchy",
        }
    }
}

/// One cell of the factorial design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub residual_kind: ResidualKind,
    pub covariate_dist: Distribution,
    #[serde(default)]
    pub rank_transform: bool,
    pub n: usize,
    pub r1: f64,
}

impl CellConfig {
    /// `round(alpha n)`.
    pub fn p(&self) -> usize {
        (self.alpha * self.n as f64).round() as usize
    }

    /// `round(r1 n)`.
    pub fn n1(&self) -> usize {
        (self.r1 * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        if !self.delta.is_finite() {
            return bad(format!("delta {} is not finite", self.delta));
        }
        if !(self.r1 > 0.0 && self.r1 < 1.0) {
            return bad(format!("r1 {} outside (0, 1)", self.r1));
        }
        let (p, n1) = (self.p(), self.n1());
        if p < 1 || p >= self.n {
            return bad(format!("p = {p} must satisfy 1 <= p < n = {}", self.n));
        }
        if n1 < 2 || n1 + 2 > self.n {
            return bad(format!("n1 = {n1} must satisfy 2 <= n1 <= n - 2"));
        }
        Ok(())
    }

    /// Stable identity of the cell, independent of its position in a grid.
    pub fn key(&self) -> u64 {
        key_of(&[
            self.alpha.to_bits(),
            self.delta.to_bits(),
            self.gamma.to_bits(),
            self.residual_kind.code(),
            self.covariate_dist.code(),
            self.rank_transform as u64,
            self.n as u64,
            self.r1.to_bits(),
        ])
    }
}

/// `eps(1) = Scale((I - H) h)` with `h` the leverages, `eps(0) = -2 eps(1)`.
pub fn worst_case_residual(hat: &HatStructure) -> Result<(Vec<f64>, Vec<f64>)> {
    let lev = hat.leverages();
    let v = lev - hat.h() * lev;
    let eps1 = scale(v.as_slice()).map_err(|e| match e {
        Error::ZeroSpread => Error::DegenerateWorstCase,
        other => other,
    })?;
    let eps0 = eps1.iter().map(|e| -2.0 * e).collect();
    Ok((eps1, eps0))
}

/// Two independent scaled residual vectors.
pub fn t_residual(n: usize, dist: Distribution, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::TooFew { needed: 2, got: n });
    }
    let mut out = Vec::with_capacity(2);
    for stream in 0..2 {
        let mut rng = substream(seed, key_of(&[RESIDUAL, dist.code()]), stream);
        let raw: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        out.push(scale(&raw)?);
    }
    let eps0 = out.pop().expect("two streams");
    let eps1 = out.pop().expect("two streams");
    Ok((eps1, eps0))
}

/// Replaces `a` by t3 order statistics at the ranks of `a`. Ties keep the
/// original index order.
pub fn trans(a: &[f64], seed: u64) -> Vec<f64> {
    let mut b = draws(Distribution::T3, seed, TRANS, a.len());
    b.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j)));
    let mut out = vec![0.0; a.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = b[rank];
    }
    out
}

pub fn build_cell(base: &BaseTables, cfg: &CellConfig) -> Result<ScienceTable> {
    cfg.validate()?;
    if base.n() != cfg.n {
        return Err(Error::DimensionMismatch {
            expected: base.n(),
            got: cfg.n,
        });
    }
    if base.dist != cfg.covariate_dist {
        return Err(Error::InvalidParameter(format!(
            "base tables drawn from {} but cell asks for {} covariates",
            base.dist.name(),
            cfg.covariate_dist.name()
        )));
    }
    let (n, p) = (cfg.n, cfg.p());
    let x = CovariateMatrix::new(base.calx.columns(0, p).into_owned())?;
    let hat = build_hat_structure(&x)?;

    let beta = DVector::from_column_slice(&base.beta[..p]);
    let delta = DVector::from_column_slice(&base.delta_vec[..p]);
    let beta1 = &beta + &delta * cfg.delta;
    let beta0 = &beta - &delta * cfg.delta;
    let mut lin1: Vec<f64> = (x.matrix() * beta1).iter().copied().collect();
    let mut lin0: Vec<f64> = (x.matrix() * beta0).iter().copied().collect();
    if cfg.rank_transform {
        let trans_seed = key_of(&[base.seed, cfg.key()]);
        lin1 = trans(&lin1, trans_seed);
        lin0 = trans(&lin0, trans_seed);
    }
    let lin1 = scale(&lin1)?;
    let lin0 = scale(&lin0)?;

    let (eps1, eps0) = match cfg.residual_kind {
        ResidualKind::WorstCase => worst_case_residual(&hat)?,
        ResidualKind::T3 => t_residual(n, Distribution::T3, base.seed)?,
        ResidualKind::Cauchy => t_residual(n, Distribution::Cauchy, base.seed)?,
    };
    let noise = 1.0 / cfg.gamma.sqrt();
    let y1 = (0..n)
        .map(|i| base.mu1 + lin1[i] + eps1[i] * noise)
        .collect();
    let y0 = (0..n)
        .map(|i| base.mu0 + lin0[i] + eps0[i] * noise)
        .collect();
    ScienceTable::with_hat(y1, y0, x, hat)
}

/// 17 significant digits in scientific notation, which round-trips any
/// `f64` and does not depend on locale.
pub fn format_real(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Writes `Y1, Y0, X_1..X_p` with a header row.
pub fn write_science_csv<W: Write>(table: &ScienceTable, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv write failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let x = table.covariates();
    let mut header = vec!["Y1".to_string(), "Y0".to_string()];
    header.extend((1..=x.p()).map(|j| format!("X_{j}")));
    w.write_record(&header).map_err(io)?;
    for i in 0..table.n() {
        let mut row = vec![format_real(table.y1()[i]), format_real(table.y0()[i])];
        row.extend(x.row(i).into_iter().map(format_real));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidParameter(format!("csv flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finitepop::{dot, empirical_mean};
    use crate::inference::correlation;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn cell(alpha: f64, kind: ResidualKind) -> CellConfig {
        CellConfig {
            alpha,
            delta: 0.25,
            gamma: 3.0,
            residual_kind: kind,
            covariate_dist: Distribution::T3,
            rank_transform: false,
            n: 60,
            r1: 0.35,
        }
    }

    #[test]
    fn t3_quantile_matches_reference_and_inverts_cdf() {
        let reference = StudentsT::new(0.0, 1.0, 3.0).unwrap();
        for k in 1..200 {
            let u = k as f64 / 200.0;
            let q = t3_quantile(u);
            assert_abs_diff_eq!(
                q,
                reference.inverse_cdf(u),
                epsilon = 1e-8 * q.abs().max(1.0)
            );
            assert_abs_diff_eq!(t3_cdf(q), u, epsilon = 1e-14);
        }
        // deep tails, where the CDF above cancels: compare in relative terms
        for u in [1e-12, 1e-9, 1e-6, 1.0 - 1e-6, 1.0 - 1e-9] {
            let q = t3_quantile(u);
            let r = reference.inverse_cdf(u);
            assert!((q - r).abs() <= 1e-6 * r.abs(), "u = {u}: {q} vs {r}");
        }
        assert_eq!(t3_quantile(0.5), 0.0);
        assert_eq!(t3_quantile(0.25), -t3_quantile(0.75));
    }

    #[test]
    fn t3_upper_quartile() {
        // tabulated t3 quantile
        assert_abs_diff_eq!(t3_quantile(0.75), 0.764_892_328_404_345, epsilon = 1e-12);
    }

    #[test]
    fn cauchy_quartiles() {
        assert_abs_diff_eq!(
            cauchy_quantile(0.75) - cauchy_quantile(0.25),
            2.0,
            epsilon = 1e-12
        );
    }

    fn quantile_of(mut v: Vec<f64>, q: f64) -> f64 {
        v.sort_by(f64::total_cmp);
        v[((v.len() - 1) as f64 * q).round() as usize]
    }

    #[test]
    fn base_table_draws_have_expected_shape() {
        let t = gen_base_tables(1000, Distribution::T3, 3).unwrap();
        let pool: Vec<f64> = t.calx.iter().copied().collect();
        assert!(quantile_of(pool, 0.5).abs() < 0.05);

        let c = gen_base_tables(1000, Distribution::Cauchy, 3).unwrap();
        let pool: Vec<f64> = c.calx.iter().copied().collect();
        let iqr = quantile_of(pool.clone(), 0.75) - quantile_of(pool, 0.25);
        assert!((iqr - 2.0).abs() < 0.05, "iqr {iqr}");
    }

    #[test]
    fn base_tables_are_deterministic() {
        let a = gen_base_tables(30, Distribution::T3, 11).unwrap();
        let b = gen_base_tables(30, Distribution::T3, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_base_tables(30, Distribution::T3, 12).unwrap();
        assert_ne!(a.calx, c.calx);
        assert!(gen_base_tables(3, Distribution::T3, 1).is_err());
    }

    #[test]
    fn cell_validation() {
        assert!(cell(0.1, ResidualKind::T3).validate().is_ok());
        assert!(cell(0.001, ResidualKind::T3).validate().is_err());
        assert!(cell(1.2, ResidualKind::T3).validate().is_err());
        let mut c = cell(0.1, ResidualKind::T3);
        c.r1 = 0.01;
        assert!(c.validate().is_err());
        c.r1 = 0.35;
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(cell(0.1, ResidualKind::T3).p(), 6);
        assert_eq!(cell(0.1, ResidualKind::T3).n1(), 21);
    }

    #[test]
    fn p_matches_grid_at_full_scale() {
        let expect = [20, 100, 200, 300, 400, 700];
        for (alpha, p) in [0.02, 0.1, 0.2, 0.3, 0.4, 0.7].into_iter().zip(expect) {
            let c = CellConfig {
                n: 1000,
                ..cell(alpha, ResidualKind::T3)
            };
            assert_eq!(c.p(), p);
        }
    }

    #[test]
    fn cell_key_depends_on_every_factor() {
        let c = cell(0.1, ResidualKind::T3);
        let variants = [
            CellConfig { alpha: 0.2, ..c },
            CellConfig { delta: 0.75, ..c },
            CellConfig { gamma: 0.5, ..c },
            CellConfig {
                residual_kind: ResidualKind::WorstCase,
                ..c
            },
            CellConfig {
                rank_transform: true,
                ..c
            },
            CellConfig { n: 61, ..c },
        ];
        for v in variants {
            assert_ne!(v.key(), c.key());
        }
        assert_eq!(c.key(), cell(0.1, ResidualKind::T3).key());
    }

    #[test]
    fn worst_case_residual_properties() {
        let base = gen_base_tables(60, Distribution::T3, 5).unwrap();
        let table = build_cell(&base, &cell(0.2, ResidualKind::WorstCase)).unwrap();
        let (e1, e0) = worst_case_residual(table.hat()).unwrap();
        assert!(empirical_mean(&e1).unwrap().abs() < 1e-12);
        assert!(e1.iter().zip(&e0).all(|(a, b)| b + 2.0 * a == 0.0));
        let he = table.hat().h() * DVector::from_column_slice(&e1);
        assert!(he.amax() < 1e-8);
    }

    #[test]
    fn worst_case_rejects_constant_leverages() {
        // columns of a balanced +/-1 orthogonal design give H_ii = p/n
        let rows: Vec<f64> = (0..8)
            .flat_map(|i| {
                [
                    if i % 2 == 0 { 1.0 } else { -1.0 },
                    if i % 4 < 2 { 1.0 } else { -1.0 },
                ]
            })
            .collect();
        let x = CovariateMatrix::from_rows(8, 2, &rows).unwrap();
        let hat = build_hat_structure(&x).unwrap();
        assert_eq!(worst_case_residual(&hat), Err(Error::DegenerateWorstCase));
    }

    #[test]
    fn t_residual_properties() {
        let (e1, e0) = t_residual(2000, Distribution::T3, 9).unwrap();
        for e in [&e1, &e0] {
            assert!(empirical_mean(e).unwrap().abs() < 1e-12);
            assert_abs_diff_eq!(dot(e, e) / 2000.0, 1.0, epsilon = 1e-12);
        }
        assert!(correlation(&e1, &e0).unwrap().abs() < 3.0 / 2000f64.sqrt());
        assert_eq!(t_residual(2000, Distribution::T3, 9).unwrap().0, e1);
    }

    #[test]
    fn trans_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let out = trans(&a, 4);
        assert!(out.windows(2).all(|w| w[0] <= w[1]));

        let b = [0.3, -1.0, 2.5, 0.0, 7.0, -3.0];
        let moved: Vec<f64> = b.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(trans(&b, 8), trans(&moved, 8));

        let out = trans(&b, 8);
        for i in 0..b.len() {
            for j in 0..b.len() {
                assert_eq!(b[i] < b[j], out[i] < out[j]);
            }
        }
    }

    #[test]
    fn trans_ties_follow_index() {
        let out = trans(&[1.0, 1.0, 0.0], 2);
        assert!(out[2] <= out[0] && out[0] <= out[1]);
    }

    #[test]
    fn zero_delta_collapses_coefficients() {
        let base = gen_base_tables(60, Distribution::T3, 6).unwrap();
        let cfg = CellConfig {
            delta: 0.0,
            ..cell(0.1, ResidualKind::T3)
        };
        let table = build_cell(&base, &cfg).unwrap();
        let (e1, e0) = t_residual(60, Distribution::T3, 6).unwrap();
        let noise = 1.0 / 3f64.sqrt();
        for i in 0..60 {
            let want = base.mu1 - base.mu0 + (e1[i] - e0[i]) * noise;
            assert_abs_diff_eq!(table.effects()[i], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_part_has_unit_second_moment() {
        let base = gen_base_tables(60, Distribution::T3, 7).unwrap();
        let cfg = CellConfig {
            gamma: 1e16,
            ..cell(0.1, ResidualKind::T3)
        };
        let table = build_cell(&base, &cfg).unwrap();
        let lin: Vec<f64> = table.y1().iter().map(|y| y - base.mu1).collect();
        assert_abs_diff_eq!(dot(&lin, &lin) / 60.0, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cells_rebuild_identically() {
        let base = gen_base_tables(60, Distribution::Cauchy, 8).unwrap();
        let cfg = CellConfig {
            covariate_dist: Distribution::Cauchy,
            rank_transform: true,
            ..cell(0.3, ResidualKind::WorstCase)
        };
        let a = build_cell(&base, &cfg).unwrap();
        let b = build_cell(&base, &cfg).unwrap();
        assert_eq!(a.y1(), b.y1());
        assert_eq!(a.y0(), b.y0());
        assert!(build_cell(&base, &cell(0.3, ResidualKind::T3)).is_err());
    }

    #[test]
    fn science_csv_round_trips() {
        let base = gen_base_tables(12, Distribution::T3, 9).unwrap();
        let cfg = CellConfig {
            n: 12,
            ..cell(0.25, ResidualKind::T3)
        };
        let table = build_cell(&base, &cfg).unwrap();
        let mut buf = Vec::new();
        write_science_csv(&table, &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(r.headers().unwrap(), vec!["Y1", "Y0", "X_1", "X_2", "X_3"]);
        for (i, rec) in r.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(rec[0].parse::<f64>().unwrap(), table.y1()[i]);
            assert_eq!(
                rec[4].parse::<f64>().unwrap(),
                table.covariates().matrix()[(i, 2)]
            );
        }
    }
}
