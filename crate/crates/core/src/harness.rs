//! Monte Carlo engine.
//!
//! Each replicate draws one complete randomization from its own stream
//! (`seed`, cell key, replicate index), evaluates the five estimator and
//! variance pairings, and records intervals. Aggregation walks replicates in
//! index order, so the numbers do not depend on how replicates were
//! scheduled.
//!
//! Output tables have frozen columns, see [`CSV_COLUMNS`].

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::design::{complete_randomization, enumerate_assignments, Arm, Assignment};
use crate::dgp::{build_cell, format_real, BaseTables, CellConfig};
use crate::error::{Error, Result};
use crate::estimators::{tau_adj, tau_db, tau_unadj, LinFit, ObservedData, ScienceTable};
use crate::exec::Execution;
use crate::finitepop::compensated_sum;
use crate::inference::{
    estimate_variance, neyman_variance_unadj, normal_quantile, oracle_variances, OracleVariances,
    VarianceEstimate,
};
use crate::rng::{key_of, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    /// Difference in means with the Neyman variance.
    Unadj,
    /// Debiased adjustment with the combined plug-in variance.
    Hd,
    /// Adjustment without the debiasing term, same variance.
    HdUndb,
    /// Arm-wise OLS with HC3.
    Lin,
    /// Debiased arm-wise OLS with HC3.
    LinDb,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 5] = [
        EstimatorId::Unadj,
        EstimatorId::Hd,
        EstimatorId::HdUndb,
        EstimatorId::Lin,
        EstimatorId::LinDb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Unadj => "unadj",
            EstimatorId::Hd => "hd",
            EstimatorId::HdUndb => "hd_undb",
            EstimatorId::Lin => "lin",
            EstimatorId::LinDb => "lin_db",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// A point estimate with its paired variance and interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub variance: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    fn new(point: f64, variance: f64, n: usize, z: f64) -> Self {
        let half = z * (variance / n as f64).sqrt();
        Self {
            point,
            variance,
            lo: point - half,
            hi: point + half,
        }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// All five pairings on one observed data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub estimates: [Result<Estimate>; 5],
    /// The plug-in decomposition behind the `hd` variance, when available.
    pub variance: Result<VarianceEstimate>,
}

impl Evaluation {
    pub fn get(&self, id: EstimatorId) -> &Result<Estimate> {
        &self.estimates[id.slot()]
    }
}

/// Evaluates every estimator at interval level `level` (0.05 gives 95%
/// intervals). A failing estimator does not affect the others.
pub fn evaluate(data: &ObservedData<'_>, level: f64) -> Evaluation {
    let n = data.n();
    let z = normal_quantile(1.0 - level / 2.0);
    let unadj = neyman_variance_unadj(data).map(|v| Estimate::new(tau_unadj(data), v, n, z));
    let variance = estimate_variance(data);
    let hd_pair = |point: Result<f64>| -> Result<Estimate> {
        let v = variance.as_ref().map_err(Clone::clone)?;
        Ok(Estimate::new(point?, v.sigma_cb2, n, z))
    };
    let hd = hd_pair(tau_db(data));
    let hd_undb = hd_pair(tau_adj(data));
    let (lin, lin_db) = match LinFit::fit(data).and_then(|f| f.hc3(data).map(|v| (f, v))) {
        Ok((fit, v)) => (
            Ok(Estimate::new(fit.tau_lin(), v, n, z)),
            Ok(Estimate::new(fit.tau_lin_db(data), v, n, z)),
        ),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    Evaluation {
        estimates: [unadj, hd, hd_undb, lin, lin_db],
        variance,
    }
}

/// Replication settings shared by every cell of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub reps: usize,
    pub seed: u64,
    /// Significance level; intervals have coverage `1 - level`.
    pub level: f64,
    #[serde(skip)]
    pub execution: Execution,
    /// Keep per-replicate estimates in the result.
    #[serde(default)]
    pub keep_replicates: bool,
}

impl MonteCarlo {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            level: 0.05,
            execution: Execution::default(),
            keep_replicates: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::TooFew {
                needed: 2,
                got: self.reps,
            });
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "level {} outside (0, 1)",
                self.level
            )));
        }
        Ok(())
    }
}

/// Metric summary of one estimator over the valid replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: EstimatorId,
    pub valid_reps: usize,
    /// RMSE over `sigma_cre / sqrt(n)`.
    pub rel_rmse: f64,
    pub rel_rmse_se: f64,
    /// `|bias|` over `sigma_hd / sqrt(n)`.
    pub rel_bias: f64,
    pub rel_bias_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    /// Mean per-replicate ratio of interval length to the unadjusted one.
    pub rel_ci_length: f64,
    pub rel_ci_length_se: f64,
    pub mean_variance: f64,
    pub mean_variance_se: f64,
    /// First failure message when some replicates were not usable.
    pub na_reason: Option<String>,
}

/// Per-replicate record kept when [`MonteCarlo::keep_replicates`] is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub estimates: [Option<Estimate>; 5],
}

/// Monte Carlo summary of one science table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableResult {
    pub n: usize,
    pub p: usize,
    pub n1: usize,
    pub reps: usize,
    pub tau_bar: f64,
    pub oracle: OracleVariances,
    pub sigma_hd_l2_ratio: f64,
    pub sigma_hd_q2_ratio: f64,
    pub sigma_adj2_ratio: f64,
    pub estimators: Vec<EstimatorMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<Vec<ReplicateRecord>>,
}

impl TableResult {
    pub fn metrics(&self, id: EstimatorId) -> &EstimatorMetrics {
        &self.estimators[id.slot()]
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (k - 1.0) / k).sqrt())
}

fn summarize(
    id: EstimatorId,
    outcomes: &[[Result<Estimate>; 5]],
    tau_bar: f64,
    oracle: &OracleVariances,
    n: usize,
) -> EstimatorMetrics {
    let root_n = (n as f64).sqrt();
    let mut errors = Vec::new();
    let mut squared = Vec::new();
    let mut covered = Vec::new();
    let mut ratios = Vec::new();
    let mut variances = Vec::new();
    let mut na_reason = None;
    let mut failures = 0usize;
    for rep in outcomes {
        match &rep[id.slot()] {
            Ok(est) => {
                let err = est.point - tau_bar;
                errors.push(err);
                squared.push(err * err);
                covered.push(if est.lo <= tau_bar && tau_bar <= est.hi {
                    1.0
                } else {
                    0.0
                });
                variances.push(est.variance);
                if let Ok(base) = &rep[EstimatorId::Unadj.slot()] {
                    if base.length() > 0.0 {
                        ratios.push(est.length() / base.length());
                    }
                }
            }
            Err(e) => {
                failures += 1;
                if na_reason.is_none() {
                    na_reason = Some(e.to_string());
                }
            }
        }
    }
    if let Some(reason) = na_reason.as_mut() {
        *reason = format!(
            "{failures} of {} replicates failed: {reason}",
            outcomes.len()
        );
    }
    let rmse_scale = (oracle.sigma_cre2.sqrt()) / root_n;
    let bias_scale = (oracle.sigma_hd2.max(0.0).sqrt()) / root_n;

    let (mse, mse_se) = mean_and_se(&squared);
    let rmse = mse.sqrt();
    let (bias, bias_se) = mean_and_se(&errors);
    let (coverage, _) = mean_and_se(&covered);
    let (rel_len, rel_len_se) = mean_and_se(&ratios);
    let (mean_var, mean_var_se) = mean_and_se(&variances);
    let k = covered.len() as f64;
    EstimatorMetrics {
        estimator: id,
        valid_reps: errors.len(),
        rel_rmse: rmse / rmse_scale,
        // delta method: d sqrt(m) = dm / (2 sqrt(m))
        rel_rmse_se: mse_se / (2.0 * rmse) / rmse_scale,
        rel_bias: bias.abs() / bias_scale,
        rel_bias_se: bias_se / bias_scale,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / k).sqrt(),
        rel_ci_length: rel_len,
        rel_ci_length_se: rel_len_se,
        mean_variance: mean_var,
        mean_variance_se: mean_var_se,
        na_reason,
    }
}

fn aggregate(
    table: &ScienceTable,
    n1: usize,
    outcomes: Vec<[Result<Estimate>; 5]>,
    keep_replicates: bool,
) -> Result<TableResult> {
    let n = table.n();
    let oracle = oracle_variances(table, n1 as f64 / n as f64)?;
    let tau_bar = table.tau_bar();
    let estimators = EstimatorId::ALL
        .iter()
        .map(|&id| summarize(id, &outcomes, tau_bar, &oracle, n))
        .collect();
    let replicates = keep_replicates.then(|| {
        outcomes
            .iter()
            .enumerate()
            .map(|(index, rep)| ReplicateRecord {
                index,
                estimates: std::array::from_fn(|k| rep[k].as_ref().ok().copied()),
            })
            .collect()
    });
    Ok(TableResult {
        n,
        p: table.covariates().p(),
        n1,
        reps: outcomes.len(),
        tau_bar,
        sigma_hd_l2_ratio: oracle.sigma_hd_l2 / oracle.sigma_hd2,
        sigma_hd_q2_ratio: oracle.sigma_hd_q2 / oracle.sigma_hd2,
        sigma_adj2_ratio: oracle.sigma_adj2 / oracle.sigma_hd2,
        oracle,
        estimators,
        replicates,
    })
}

fn check_n1(table: &ScienceTable, n1: usize) -> Result<()> {
    if n1 < 2 || n1 + 2 > table.n() {
        return Err(Error::InvalidParameter(format!(
            "n1 = {n1} must satisfy 2 <= n1 <= n - 2"
        )));
    }
    Ok(())
}

const ASSIGNMENT_FAMILY: u64 = 0xA551;

/// Draws `mc.reps` complete randomizations of `n1` treated units. `key`
/// names the random stream family, normally [`CellConfig::key`].
pub fn run_table(
    table: &ScienceTable,
    n1: usize,
    key: u64,
    mc: &MonteCarlo,
) -> Result<TableResult> {
    mc.validate()?;
    check_n1(table, n1)?;
    let n = table.n();
    let family = key_of(&[ASSIGNMENT_FAMILY, key]);
    let outcomes = mc.execution.map_indexed(mc.reps, |r| {
        let mut rng = substream(mc.seed, family, r as u64);
        let a = complete_randomization(n, n1, &mut rng).expect("n1 checked above");
        let data = table.observe(&a).expect("assignment matches table");
        evaluate(&data, mc.level).estimates
    });
    aggregate(table, n1, outcomes, mc.keep_replicates)
}

/// Like [`run_table`] but over every assignment, so the summary is exact.
pub fn run_table_enumerated(table: &ScienceTable, n1: usize, level: f64) -> Result<TableResult> {
    check_n1(table, n1)?;
    let outcomes = enumerate_assignments(table.n(), n1)?
        .map(|a| {
            let data = table.observe(&a).expect("assignment matches table");
            evaluate(&data, level).estimates
        })
        .collect();
    aggregate(table, n1, outcomes, false)
}

/// One factorial cell's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellConfig,
    #[serde(flatten)]
    pub result: TableResult,
}

pub fn run_cell(table: &ScienceTable, cell: &CellConfig, mc: &MonteCarlo) -> Result<CellResult> {
    Ok(CellResult {
        cell: *cell,
        result: run_table(table, cell.n1(), cell.key(), mc)?,
    })
}

/// A cell that could not be run, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: CellConfig,
    pub error: String,
}

pub type CellOutcome = std::result::Result<CellResult, CellFailure>;

/// Runs every cell against the base tables matching its `(n, covariate
/// distribution)`. Cells fail independently. When `cancel` becomes true the
/// run stops before the next cell; the cells finished so far are returned.
pub fn run_factorial(
    bases: &[BaseTables],
    grid: &[CellConfig],
    mc: &MonteCarlo,
    cancel: &AtomicBool,
    mut on_cell: impl FnMut(&CellOutcome),
) -> Vec<CellOutcome> {
    let mut out = Vec::with_capacity(grid.len());
    for cell in grid {
        if cancel.load(Ordering::Relaxed) {
            break;
        }
        let outcome = bases
            .iter()
            .find(|b| b.n() == cell.n && b.dist == cell.covariate_dist)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "no base tables for n = {} with {} covariates",
                    cell.n,
                    cell.covariate_dist.name()
                ))
            })
            .and_then(|base| build_cell(base, cell))
            .and_then(|table| run_cell(&table, cell, mc))
            .map_err(|e| CellFailure {
                cell: *cell,
                error: e.to_string(),
            });
        on_cell(&outcome);
        out.push(outcome);
    }
    out
}

/// Exact moments of the randomization distribution over all assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    pub assignments: usize,
    pub tau_bar: f64,
    pub mean_tau_unadj: f64,
    pub var_tau_unadj: f64,
    /// `sigma_cre2 / n`.
    pub sigma_cre2_over_n: f64,
    /// Means of `Ybar_1`, `Ybar_0` across assignments.
    pub mean_arm_means: [f64; 2],
    pub population_means: [f64; 2],
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub mean_i3ub: f64,
    pub mean_i3ub_prime: f64,
    pub mean_i4: f64,
    pub mean_sigma_hat2: f64,
    pub mean_sigma_prime_hat2: f64,
}

impl EnumerationReport {
    /// Absolute deviations of the three exact identities.
    pub fn identity_errors(&self) -> [f64; 4] {
        [
            (self.mean_tau_unadj - self.tau_bar).abs(),
            (self.var_tau_unadj - self.sigma_cre2_over_n).abs(),
            (self.mean_arm_means[0] - self.population_means[0]).abs(),
            (self.mean_arm_means[1] - self.population_means[1]).abs(),
        ]
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.identity_errors().iter().all(|e| *e <= tol)
    }
}

pub fn enumeration_check(table: &ScienceTable, n1: usize) -> Result<EnumerationReport> {
    let n = table.n();
    let assignments: Vec<Assignment> = enumerate_assignments(n, n1)?.collect();
    let k = assignments.len() as f64;
    let mut taus = Vec::with_capacity(assignments.len());
    let mut arm_means = [Vec::new(), Vec::new()];
    let mut comps: [Vec<f64>; 7] = Default::default();
    for a in &assignments {
        let data = table.observe(a)?;
        taus.push(tau_unadj(&data));
        arm_means[0].push(data.arm_mean(Arm::Treated));
        arm_means[1].push(data.arm_mean(Arm::Control));
        if n1 >= 2 && n - n1 >= 2 {
            let v = estimate_variance(&data)?;
            let vals = [
                v.i1,
                v.i2,
                v.i3ub,
                v.i3ub_prime,
                v.i4,
                v.sigma_hat2,
                v.sigma_prime_hat2,
            ];
            for (c, x) in comps.iter_mut().zip(vals) {
                c.push(x);
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            compensated_sum(v.iter().copied()) / v.len() as f64
        }
    };
    let tau_bar = table.tau_bar();
    let mean_tau = mean(&taus);
    // population variance over the full randomization distribution
    let var_tau = compensated_sum(taus.iter().map(|t| (t - mean_tau) * (t - mean_tau))) / k;
    let sigma_cre2 = oracle_variances(table, n1 as f64 / n as f64)?.sigma_cre2;
    Ok(EnumerationReport {
        assignments: assignments.len(),
        tau_bar,
        mean_tau_unadj: mean_tau,
        var_tau_unadj: var_tau,
        sigma_cre2_over_n: sigma_cre2 / n as f64,
        mean_arm_means: [mean(&arm_means[0]), mean(&arm_means[1])],
        population_means: [mean(table.y1()), mean(table.y0())],
        mean_i1: mean(&comps[0]),
        mean_i2: mean(&comps[1]),
        mean_i3ub: mean(&comps[2]),
        mean_i3ub_prime: mean(&comps[3]),
        mean_i4: mean(&comps[4]),
        mean_sigma_hat2: mean(&comps[5]),
        mean_sigma_prime_hat2: mean(&comps[6]),
    })
}

/// Frozen column order of the results table.
pub const CSV_COLUMNS: [&str; 31] = [
    "alpha",
    "delta",
    "gamma",
    "residual_kind",
    "covariate_dist",
    "rank_transform",
    "n",
    "r1",
    "p",
    "n1",
    "reps",
    "estimator",
    "valid_reps",
    "rel_rmse",
    "rel_rmse_se",
    "rel_bias",
    "rel_bias_se",
    "coverage",
    "coverage_se",
    "rel_ci_length",
    "rel_ci_length_se",
    "mean_variance",
    "mean_variance_se",
    "tau_bar",
    "sigma_cre2",
    "sigma_hd2",
    "sigma_adj2",
    "sigma_hd_l2_ratio",
    "sigma_hd_q2_ratio",
    "sigma_adj2_ratio",
    "na_reason",
];

fn real(v: f64) -> String {
    if v.is_finite() {
        format_real(v)
    } else {
        "NA".to_string()
    }
}

fn cell_fields(cell: &CellConfig) -> Vec<String> {
    vec![
        real(cell.alpha),
        real(cell.delta),
        real(cell.gamma),
        cell.residual_kind.name().to_string(),
        cell.covariate_dist.name().to_string(),
        cell.rank_transform.to_string(),
        cell.n.to_string(),
        real(cell.r1),
        cell.p().to_string(),
        cell.n1().to_string(),
    ]
}

/// Writes one row per cell and estimator. Failed cells get NA rows that
/// carry the failure reason.
pub fn write_results_csv<W: Write>(outcomes: &[CellOutcome], reps: usize, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv write failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for outcome in outcomes {
        match outcome {
            Ok(c) => {
                let r = &c.result;
                for m in &r.estimators {
                    let mut row = cell_fields(&c.cell);
                    row.extend([
                        r.reps.to_string(),
                        m.estimator.name().to_string(),
                        m.valid_reps.to_string(),
                        real(m.rel_rmse),
                        real(m.rel_rmse_se),
                        real(m.rel_bias),
                        real(m.rel_bias_se),
                        real(m.coverage),
                        real(m.coverage_se),
                        real(m.rel_ci_length),
                        real(m.rel_ci_length_se),
                        real(m.mean_variance),
                        real(m.mean_variance_se),
                        real(r.tau_bar),
                        real(r.oracle.sigma_cre2),
                        real(r.oracle.sigma_hd2),
                        real(r.oracle.sigma_adj2),
                        real(r.sigma_hd_l2_ratio),
                        real(r.sigma_hd_q2_ratio),
                        real(r.sigma_adj2_ratio),
                        m.na_reason.clone().unwrap_or_default(),
                    ]);
                    w.write_record(&row).map_err(io)?;
                }
            }
            Err(f) => {
                for id in EstimatorId::ALL {
                    let mut row = cell_fields(&f.cell);
                    row.push(reps.to_string());
                    row.push(id.name().to_string());
                    row.push("0".to_string());
                    row.extend(std::iter::repeat_n("NA".to_string(), 17));
                    row.push(f.error.clone());
                    w.write_record(&row).map_err(io)?;
                }
            }
        }
    }
    w.flush()
        .map_err(|e| Error::InvalidParameter(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// JSON document mirroring the cell outcomes.
pub fn results_json(outcomes: &[CellOutcome]) -> serde_json::Value {
    let cells: Vec<serde_json::Value> = outcomes
        .iter()
        .map(|o| match o {
            Ok(c) => serde_json::json!({ "status": "ok", "result": c }),
            Err(f) => serde_json::json!({ "status": "failed", "failure": f }),
        })
        .collect();
    serde_json::Value::Array(cells)
}
