//! Acceptance gate. Prints one PASS/FAIL line per check, then one line per
//! criterion, and exits nonzero when any criterion fails.
//!
//! Every random quantity is drawn from seed 1.

use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use randadj::design::{complete_randomization, Assignment, CovariateMatrix};
use randadj::dgp::{build_cell, gen_base_tables, CellConfig, Distribution, ResidualKind};
use randadj::estimators::{tau_db, tau_unadj, ScienceTable};
use randadj::finitepop::{scaled_covariance, scaled_variance};
use randadj::harness::{run_factorial, write_results_csv, EstimatorId, MonteCarlo};
use randadj::inference::{
    estimate_variance, oracle_moment_targets, oracle_variances, rl2, sample_cross_offdiag,
    sample_diag_quadratic, sample_offdiag_quadratic, variance_components,
};
use randadj::rng::{key_of, substream};
use randadj::verify::{exact_moment_expectations, exact_variance_expectation};
use randadj::{Arm, Execution};

const SEED: u64 = 1;

// criterion 1
const ENUM_TOL: f64 = 1e-10;
// criterion 2
const IDENTITY_TOL: f64 = 1e-8;
// criteria 3 and 8
const MC_SE_TOL: f64 = 3.0;
// criterion 4
const QUANTILE_TOL: f64 = 0.15;
const STD_VAR_TOL: f64 = 0.1;
// criterion 5
const MIN_COVERAGE: f64 = 0.94;
const LIN_MAX_COVERAGE: f64 = 0.90;
// criterion 6
const DB_MAX_BIAS: f64 = 0.3;
const BIASED_MIN_BIAS: f64 = 1.0;
// criterion 7
const CURVE_TOL: f64 = 1e-3;

type Step = fn(&mut Gate);

struct Gate {
    criterion: u8,
    outcomes: Vec<(u8, bool)>,
}

impl Gate {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        println!(
            "{} C{} {name}: {detail}",
            if passed { "PASS" } else { "FAIL" },
            self.criterion
        );
        self.outcomes.push((self.criterion, passed));
    }

    fn info(&self, name: &str, detail: String) {
        println!("INFO C{} {name}: {detail}", self.criterion);
    }

    fn runtime(&mut self, started: Instant, limit: Duration) {
        let took = started.elapsed();
        self.check(
            "runtime",
            took < limit,
            format!("{:.1} s (limit {} s)", took.as_secs_f64(), limit.as_secs()),
        );
    }
}

fn draws(key: &[u64], len: usize) -> Vec<f64> {
    let mut rng = substream(SEED, key_of(key), 0);
    (0..len)
        .map(|_| Distribution::T3.sample(&mut rng))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var_n1(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    (mean(v), (var_n1(v) / v.len() as f64).sqrt())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Type 7 empirical quantile.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn cell(n: usize, alpha: f64, delta: f64, gamma: f64, kind: ResidualKind) -> CellConfig {
    CellConfig {
        alpha,
        delta,
        gamma,
        residual_kind: kind,
        covariate_dist: Distribution::T3,
        rank_transform: false,
        n,
        r1: 0.35,
    }
}

fn criterion_1(g: &mut Gate) {
    let started = Instant::now();
    let (n, n1) = (8usize, 4usize);
    let mut err = [0.0_f64; 4];
    for k in 0..20u64 {
        let p = 1 + (k % 2) as usize;
        let xs = draws(&[0xA1, k, 0], n * p);
        let y1 = draws(&[0xA1, k, 1], n);
        let y0 = draws(&[0xA1, k, 2], n);
        let x = CovariateMatrix::from_rows(n, p, &xs).unwrap();
        let table = ScienceTable::new(y1.clone(), y0.clone(), x).unwrap();

        let tau: Vec<f64> = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
        let tau_bar = mean(&tau);
        let neyman =
            var_n1(&y1) / n1 as f64 + var_n1(&y0) / (n - n1) as f64 - var_n1(&tau) / n as f64;

        let mut points = Vec::new();
        let mut arm_means = [0.0; 2];
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            let z: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let a = Assignment::new(z).unwrap();
            let data = table.observe(&a).unwrap();
            points.push(tau_unadj(&data));
            arm_means[0] += data.arm_mean(Arm::Treated);
            arm_means[1] += data.arm_mean(Arm::Control);
        }
        let count = points.len() as f64;
        assert_eq!(points.len(), 70);
        let m = mean(&points);
        let v = points.iter().map(|t| (t - m).powi(2)).sum::<f64>() / count;
        let sigma_cre2 = oracle_variances(&table, 0.5).unwrap().sigma_cre2;
        err[0] = err[0].max((m - tau_bar).abs());
        err[1] = err[1].max((v - neyman).abs());
        err[2] = err[2].max((v - sigma_cre2 / n as f64).abs());
        err[3] = err[3]
            .max((arm_means[0] / count - mean(&y1)).abs())
            .max((arm_means[1] / count - mean(&y0)).abs());
    }
    let names = [
        "mean of unadjusted equals SATE",
        "variance equals Neyman formula",
        "variance equals sigma_cre2 / n",
        "mean arm means equal population means",
    ];
    for (name, e) in names.iter().zip(err) {
        g.check(
            name,
            e <= ENUM_TOL,
            format!("max error {e:.2e} (tol {ENUM_TOL:.0e})"),
        );
    }
    g.runtime(started, Duration::from_secs(1));
}

/// Hat matrix from a thin SVD of the centered design, independent of the
/// library's Cholesky route.
fn svd_hat(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let svd = c.svd(true, false);
    let u = svd.u.unwrap();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-10 * svd.singular_values.max())
        .collect();
    let mut h = DMatrix::zeros(n, n);
    for k in keep {
        let col = u.column(k);
        h += col * col.transpose();
    }
    h
}

fn criterion_2(g: &mut Gate) {
    let started = Instant::now();
    let mut err = [0.0_f64; 8];
    let mut rng = substream(SEED, key_of(&[0xA2]), 0);
    let instances = 120;
    for k in 0..instances {
        let n = 20 + (randadj::rng::open_unit(&mut rng) * 181.0) as usize;
        let alpha = 0.05 + 0.75 * randadj::rng::open_unit(&mut rng);
        let r1 = 0.2 + 0.6 * randadj::rng::open_unit(&mut rng);
        let kind = if k % 2 == 0 {
            ResidualKind::T3
        } else {
            ResidualKind::WorstCase
        };
        let base = gen_base_tables(n, Distribution::T3, SEED + k as u64).unwrap();
        let t = build_cell(&base, &cell(n, alpha, 0.5, 1.0, kind)).unwrap();
        let nf = n as f64;
        let r0 = 1.0 - r1;

        let h = svd_hat(t.covariates().matrix());
        let lev: Vec<f64> = (0..n).map(|i| h[(i, i)]).collect();
        let c = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / nf);
        let m = &c - &h + &c * DMatrix::from_diagonal(&DVector::from_vec(lev.clone()));
        let b = m.transpose() * &m;
        let q = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                lev[i] - lev[i] * lev[i]
            } else {
                h[(i, j)] * h[(i, j)]
            }
        });

        // (a) sigma_hd_l2 from its definition against the B form
        let o = oracle_variances(&t, r1).unwrap();
        let v: Vec<f64> = (0..n).map(|i| t.y1()[i] / r1 + t.y0()[i] / r0).collect();
        let vbar = mean(&v);
        let vc = DVector::from_iterator(n, v.iter().map(|x| x - vbar));
        let via_b = r1 * r0 * (vc.transpose() * &b * &vc)[(0, 0)] / (nf - 1.0);
        err[0] = err[0].max(rel(o.sigma_hd_l2, via_b));

        // (b) partition of sigma_hd2, with the quadratic part from the test Q
        let w: Vec<f64> = (0..n)
            .map(|i| t.y1()[i] / (r1 * r1) - t.y0()[i] / (r0 * r0))
            .collect();
        let wbar = mean(&w);
        let wc = DVector::from_iterator(n, w.iter().map(|x| x - wbar));
        let quad = (r1 * r0).powi(2) * (wc.transpose() * &q * &wc)[(0, 0)] / (nf - 1.0);
        let parts = variance_components(&t, r1).unwrap();
        err[1] = err[1].max(rel(parts.total(), via_b + quad));
        err[1] = err[1].max(rel(parts.total(), o.sigma_hd2));

        // (c) B_ii closed form, on the test B and the library B
        for i in 0..n {
            let hi = lev[i];
            let want = 1.0 - 1.0 / nf + (1.0 - 2.0 / nf) * hi - (1.0 + 1.0 / nf) * hi * hi;
            err[2] = err[2]
                .max((b[(i, i)] - want).abs())
                .max((t.hat().b()[(i, i)] - want).abs());
        }

        // (d) projection identities of the library H, and agreement with the SVD H
        let lh = t.hat().h();
        err[3] = err[3].max((lh * lh - lh).amax()).max((lh - &h).amax());
        err[4] = err[4].max((lh.trace() - t.hat().p() as f64).abs());
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| lh[(i, j)].powi(2)).sum();
            let hi = lh[(i, i)];
            err[5] = err[5].max((off - (hi - hi * hi)).abs());
        }

        // (e) additivity in the weight matrix, scaling, and the variance of a sum
        let (a_vec, b_vec) = (t.y1(), t.y0());
        let (cs, ds) = (-1.7, 0.3);
        for (wa, wb) in [(&b, &q), (lh, t.hat().q())] {
            let sum = wa + wb;
            let lhs = scaled_covariance(&sum, a_vec, b_vec).unwrap();
            let rhs = scaled_covariance(wa, a_vec, b_vec).unwrap()
                + scaled_covariance(wb, a_vec, b_vec).unwrap();
            err[6] = err[6].max(rel(lhs, rhs));
            let ca: Vec<f64> = a_vec.iter().map(|x| cs * x).collect();
            let db: Vec<f64> = b_vec.iter().map(|x| ds * x).collect();
            err[6] = err[6].max(rel(
                scaled_covariance(wa, &ca, &db).unwrap(),
                cs * ds * scaled_covariance(wa, a_vec, b_vec).unwrap(),
            ));
            let ab: Vec<f64> = a_vec.iter().zip(b_vec).map(|(x, y)| x + y).collect();
            let expanded = scaled_variance(wa, a_vec).unwrap()
                + scaled_variance(wa, b_vec).unwrap()
                + 2.0 * scaled_covariance(wa, a_vec, b_vec).unwrap();
            err[7] = err[7].max(rel(scaled_variance(wa, &ab).unwrap(), expanded));
        }
    }
    let names = [
        "(a) sigma_hd_l2 equals r1 r0 S2_B",
        "(b) I1 + I2 + I3 + I4 equals sigma_hd2",
        "(c) B_ii closed form",
        "(d) H^2 = H",
        "(d) trace H = p",
        "(d) off-diagonal row sums of H^2",
        "(e) additivity and scaling",
        "(e) variance of a sum",
    ];
    for (name, e) in names.iter().zip(err) {
        g.check(
            name,
            e <= IDENTITY_TOL,
            format!("max error {e:.2e} over {instances} instances (tol {IDENTITY_TOL:.0e})"),
        );
    }
    g.runtime(started, Duration::from_secs(30));
}

fn criterion_3(g: &mut Gate) {
    let started = Instant::now();
    let cfg = cell(500, 0.01, 0.75, 0.5, ResidualKind::T3);
    let base = gen_base_tables(cfg.n, Distribution::T3, SEED).unwrap();
    let t = build_cell(&base, &cfg).unwrap();
    assert_eq!(cfg.p(), 5);
    let o = oracle_variances(&t, cfg.r1).unwrap();
    let reps = 2000;
    let mut s = Vec::with_capacity(reps);
    let mut sp = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = substream(SEED, cfg.key(), r as u64);
        let a = complete_randomization(cfg.n, cfg.n1(), &mut rng).unwrap();
        let v = estimate_variance(&t.observe(&a).unwrap()).unwrap();
        s.push(v.sigma_hat2);
        sp.push(v.sigma_prime_hat2);
    }
    let (ms, ses) = mean_se(&s);
    let (mp, sep) = mean_se(&sp);
    let target = o.sigma_adj2 + o.s_tau_e2;
    let target_p = o.sigma_adj2 + o.s_tau2;
    let z = (ms - target) / ses;
    g.check(
        "mean sigma_hat2 vs sigma_adj2 + S2_{e1-e0}",
        z.abs() <= MC_SE_TOL,
        format!("{ms:.4} +/- {ses:.4} vs {target:.4}, z = {z:.2} (tol {MC_SE_TOL})"),
    );
    let zp = (mp - target_p) / sep;
    g.check(
        "mean sigma_prime_hat2 vs sigma_adj2 + S2_tau",
        zp.abs() <= MC_SE_TOL,
        format!("{mp:.4} +/- {sep:.4} vs {target_p:.4}, z = {zp:.2} (tol {MC_SE_TOL})"),
    );
    let finite = o.sigma_hd2 + o.s_tau_e2 + o.s_diag_h_tau2;
    let exact = exact_variance_expectation(&t, cfg.n1()).unwrap();
    g.info(
        "finite-n limit sigma_hd2 + S2_{e1-e0} + S2_{diagH,tau}",
        format!("{finite:.4}, z = {:.2}", (ms - finite) / ses),
    );
    g.info(
        "exact design expectation of sigma_hat2, sigma_prime_hat2",
        format!(
            "{:.4} (z = {:.2}), {:.4} (z = {:.2})",
            exact.sigma_hat2,
            (ms - exact.sigma_hat2) / ses,
            exact.sigma_prime_hat2,
            (mp - exact.sigma_prime_hat2) / sep
        ),
    );
    g.runtime(started, Duration::from_secs(120));
}

fn criterion_4(g: &mut Gate) {
    let started = Instant::now();
    let n = 600;
    let reps = 4000;
    for alpha in [0.05, 0.3] {
        let base = gen_base_tables(n, Distribution::T3, SEED).unwrap();
        for (delta, gamma) in [(0.25, 0.5), (0.25, 3.0), (0.75, 0.5), (0.75, 3.0)] {
            let cfg = cell(n, alpha, delta, gamma, ResidualKind::T3);
            let t = build_cell(&base, &cfg).unwrap();
            let o = oracle_variances(&t, cfg.r1).unwrap();
            let sd = o.sigma_hd2.sqrt();
            let tau_bar = t.tau_bar();
            let mut stats: Vec<f64> = (0..reps)
                .map(|r| {
                    let mut rng = substream(SEED, cfg.key(), r as u64);
                    let a = complete_randomization(n, cfg.n1(), &mut rng).unwrap();
                    let point = tau_db(&t.observe(&a).unwrap()).unwrap();
                    (n as f64).sqrt() * (point - tau_bar) / sd
                })
                .collect();
            stats.sort_by(f64::total_cmp);
            let lo = quantile(&stats, 0.025);
            let hi = quantile(&stats, 0.975);
            let v = var_n1(&stats);
            let label = format!("alpha {alpha}, delta {delta}, gamma {gamma}");
            g.check(
                &format!("{label}: 2.5% quantile"),
                (lo + 1.96).abs() <= QUANTILE_TOL,
                format!("{lo:.3} vs -1.96 (tol {QUANTILE_TOL})"),
            );
            g.check(
                &format!("{label}: 97.5% quantile"),
                (hi - 1.96).abs() <= QUANTILE_TOL,
                format!("{hi:.3} vs 1.96 (tol {QUANTILE_TOL})"),
            );
            g.check(
                &format!("{label}: variance"),
                (v - 1.0).abs() <= STD_VAR_TOL,
                format!("{v:.3} vs 1 (tol {STD_VAR_TOL})"),
            );
        }
    }
    g.runtime(started, Duration::from_secs(300));
}

/// Criteria 5 and 6 share one scaled run of the factorial grid.
fn criteria_5_and_6(g: &mut Gate) {
    let started = Instant::now();
    let n = 400;
    let mut grid = Vec::new();
    for alpha in [0.05, 0.2, 0.5] {
        for delta in [0.25, 0.75] {
            for gamma in [0.5, 3.0] {
                for kind in [ResidualKind::WorstCase, ResidualKind::T3] {
                    grid.push(cell(n, alpha, delta, gamma, kind));
                }
            }
        }
    }
    let bases = vec![gen_base_tables(n, Distribution::T3, SEED).unwrap()];
    let mc = MonteCarlo::new(2000, SEED);
    let outcomes = run_factorial(&bases, &grid, &mc, &AtomicBool::new(false), |_| {});
    let results: Vec<_> = outcomes
        .into_iter()
        .map(|o| o.expect("cell runs"))
        .collect();

    g.criterion = 5;
    for r in &results {
        let c = &r.cell;
        let m = r.result.metrics(EstimatorId::Hd);
        g.check(
            &format!(
                "hd coverage, {} alpha {} delta {} gamma {}",
                c.residual_kind.name(),
                c.alpha,
                c.delta,
                c.gamma
            ),
            m.coverage >= MIN_COVERAGE,
            format!(
                "{:.4} +/- {:.4} (min {MIN_COVERAGE})",
                m.coverage, m.coverage_se
            ),
        );
    }
    let worst_half: Vec<_> = results
        .iter()
        .filter(|r| r.cell.alpha == 0.5 && r.cell.residual_kind == ResidualKind::WorstCase)
        .collect();
    for r in &worst_half {
        let c = &r.cell;
        let m = r.result.metrics(EstimatorId::Lin);
        let label = format!(
            "lin + HC3 coverage, worst alpha 0.5 delta {} gamma {}",
            c.delta, c.gamma
        );
        match &m.na_reason {
            Some(reason) => g.check(&label, false, format!("NA: {reason}")),
            None => g.check(
                &label,
                m.coverage < LIN_MAX_COVERAGE,
                format!(
                    "{:.4} +/- {:.4} (max {LIN_MAX_COVERAGE})",
                    m.coverage, m.coverage_se
                ),
            ),
        }
    }
    g.runtime(started, Duration::from_secs(600));

    g.criterion = 6;
    for r in &worst_half {
        let c = &r.cell;
        let label = format!("delta {} gamma {}", c.delta, c.gamma);
        let db = r.result.metrics(EstimatorId::Hd);
        g.check(
            &format!("hd relative bias, {label}"),
            db.rel_bias.abs() + 3.0 * db.rel_bias_se < DB_MAX_BIAS,
            format!(
                "{:.4} +/- {:.4} (max {DB_MAX_BIAS})",
                db.rel_bias, db.rel_bias_se
            ),
        );
        for id in [EstimatorId::Lin, EstimatorId::HdUndb] {
            let m = r.result.metrics(id);
            let name = format!("{} relative bias, {label}", id.name());
            match &m.na_reason {
                Some(reason) => g.check(&name, false, format!("NA: {reason}")),
                None => g.check(
                    &name,
                    m.rel_bias.abs() - 3.0 * m.rel_bias_se > BIASED_MIN_BIAS,
                    format!(
                        "{:.4} +/- {:.4} (min {BIASED_MIN_BIAS})",
                        m.rel_bias, m.rel_bias_se
                    ),
                ),
            }
        }
    }
    for r in &worst_half {
        let lin = r.result.metrics(EstimatorId::Lin);
        if lin.na_reason.is_some() {
            g.info(
                "lin feasibility",
                format!("p = {} against n1 = {}", r.result.p, r.result.n1),
            );
            break;
        }
    }
    for r in results
        .iter()
        .filter(|r| r.cell.alpha == 0.2 && r.cell.residual_kind == ResidualKind::WorstCase)
    {
        let lin = r.result.metrics(EstimatorId::Lin);
        g.info(
            &format!(
                "lin at alpha 0.2, delta {} gamma {}",
                r.cell.delta, r.cell.gamma
            ),
            format!(
                "relative bias {:.3} +/- {:.3}, HC3 coverage {:.3}",
                lin.rel_bias, lin.rel_bias_se, lin.coverage
            ),
        );
    }
}

fn criterion_7(g: &mut Gate) {
    let started = Instant::now();
    for gamma in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let at0 = rl2(0.0, gamma);
        let at1 = rl2(0.999, gamma);
        g.check(
            &format!("R_L^2(0; {gamma}) = 0"),
            at0.abs() <= CURVE_TOL,
            format!("{at0:.6}"),
        );
        g.check(
            &format!("R_L^2(0.999; {gamma}) near 1"),
            (at1 - 1.0).abs() <= 0.01,
            format!("{at1:.6} (tol 0.01)"),
        );
    }
    let v = rl2(0.1, 2.0);
    g.check(
        "R_L^2(0.1; 2) = 0.325",
        (v - 0.325).abs() <= CURVE_TOL,
        format!("{v:.6} (tol {CURVE_TOL:.0e})"),
    );
    g.runtime(started, Duration::from_secs(1));
}

fn criterion_8(g: &mut Gate) {
    let started = Instant::now();
    let cfg = cell(500, 0.1, 0.75, 0.5, ResidualKind::T3);
    let base = gen_base_tables(cfg.n, Distribution::T3, SEED).unwrap();
    let t = build_cell(&base, &cfg).unwrap();
    let reps = 2000;
    let n1 = cfg.n1();
    let names = [
        "s2_diag Y(1)",
        "s2_diag Y(0)",
        "s2_offdiag Y(1)",
        "s2_offdiag Y(0)",
        "s_offdiag Y(1),Y(0)",
    ];
    let hat = t.hat();
    for (label, d) in [("H", hat.h()), ("Q", hat.q()), ("B", hat.b())] {
        let mut vals: [Vec<f64>; 5] = Default::default();
        for r in 0..reps {
            let mut rng = substream(SEED, cfg.key(), r as u64);
            let a = complete_randomization(cfg.n, n1, &mut rng).unwrap();
            let data = t.observe(&a).unwrap();
            vals[0].push(sample_diag_quadratic(d, &data, Arm::Treated, 1.0).unwrap());
            vals[1].push(sample_diag_quadratic(d, &data, Arm::Control, 1.0).unwrap());
            vals[2].push(sample_offdiag_quadratic(d, &data, Arm::Treated, 1.0).unwrap());
            vals[3].push(sample_offdiag_quadratic(d, &data, Arm::Control, 1.0).unwrap());
            vals[4].push(sample_cross_offdiag(d, &data).unwrap());
        }
        let tg = oracle_moment_targets(d, &t).unwrap();
        let ex = exact_moment_expectations(d, &t, n1).unwrap();
        let targets = [tg.diag[0], tg.diag[1], tg.off[0], tg.off[1], tg.cross];
        let exact = [ex.diag[0], ex.diag[1], ex.off[0], ex.off[1], ex.cross];
        for k in 0..5 {
            let (m, se) = mean_se(&vals[k]);
            let z = (m - targets[k]) / se;
            g.check(
                &format!("{label} {}", names[k]),
                z.abs() <= MC_SE_TOL,
                format!(
                    "{m:.5e} +/- {se:.1e} vs {:.5e}, z = {z:.2} (tol {MC_SE_TOL})",
                    targets[k]
                ),
            );
            g.info(
                &format!("{label} {} exact design expectation", names[k]),
                format!("{:.5e}, z = {:.2}", exact[k], (m - exact[k]) / se),
            );
        }
    }
    g.runtime(started, Duration::from_secs(180));
}

fn factorial_csv(execution: Execution) -> Vec<u8> {
    let n = 120;
    let grid = [
        cell(n, 0.05, 0.25, 0.5, ResidualKind::T3),
        cell(n, 0.2, 0.75, 3.0, ResidualKind::WorstCase),
        cell(n, 0.5, 0.25, 3.0, ResidualKind::T3),
    ];
    let bases = vec![gen_base_tables(n, Distribution::T3, SEED).unwrap()];
    let mut mc = MonteCarlo::new(300, SEED);
    mc.execution = execution;
    let out = run_factorial(&bases, &grid, &mc, &AtomicBool::new(false), |_| {});
    let mut buf = Vec::new();
    write_results_csv(&out, mc.reps, &mut buf).unwrap();
    buf
}

fn criterion_9(g: &mut Gate) {
    let reference = factorial_csv(Execution::Sequential);
    g.check(
        "repeat run identical",
        factorial_csv(Execution::Sequential) == reference,
        format!("{} bytes", reference.len()),
    );
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let csv = pool.install(|| factorial_csv(Execution::Parallel));
        g.check(
            &format!("parallel with {threads} threads identical to sequential"),
            csv == reference,
            format!("{} bytes", csv.len()),
        );
    }
}

fn main() -> ExitCode {
    let mut g = Gate {
        criterion: 0,
        outcomes: Vec::new(),
    };
    let filter: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.strip_prefix('C').and_then(|s| s.parse().ok()))
        .collect();
    let run = |k: u8| filter.is_empty() || filter.contains(&k);
    let steps: [(u8, Step); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criteria_5_and_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    for (k, step) in steps {
        if run(k) || (k == 5 && run(6)) {
            g.criterion = k;
            step(&mut g);
        }
    }

    println!();
    let mut failed = false;
    for k in 1..=9u8 {
        let checks: Vec<bool> = g
            .outcomes
            .iter()
            .filter(|o| o.0 == k)
            .map(|o| o.1)
            .collect();
        if checks.is_empty() {
            continue;
        }
        let ok = checks.iter().all(|&p| p);
        failed |= !ok;
        println!(
            "criterion {k}: {} ({} of {} checks)",
            if ok { "PASS" } else { "FAIL" },
            checks.iter().filter(|&&p| p).count(),
            checks.len()
        );
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
