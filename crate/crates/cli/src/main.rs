mod analyze;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand, ValueEnum};
use randadj::dgp::{format_real, gen_base_tables};
use randadj::harness::{results_json, run_factorial, write_results_csv, MonteCarlo};
use randadj::inference::{necessary_r2, rl2};
use randadj::verify::{exact_suite, statistical_suite, CheckResult};
use randadj::Execution;
use serde_json::json;

use crate::config::RunConfig;

const OUT_DIR_ENV: &str = "RANDADJ_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "randadj-out";

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(
    name = "randadj",
    version,
    about = "Regression adjustment for randomized experiments with many covariates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a factorial Monte Carlo study described by a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to $RANDADJ_OUT_DIR, then ./randadj-out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
        /// Run only the first K cells of the grid.
        #[arg(long)]
        cells: Option<usize>,
        /// n = 1000 and 10000 replicates, overriding the config.
        #[arg(long)]
        full_scale: bool,
    },
    /// Apply every estimator to one dataset (CSV with Y, Z, X_1, ..., X_p).
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        /// Write the report as JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate R_L^2 and the necessary bound over a grid of alpha and gamma.
    Curves {
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the identity or Monte Carlo self-checks.
    Verify {
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Statistical,
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    kind: &'static str,
    messages: Vec<String>,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::config_all(vec![msg.into()])
    }

    pub fn config_all(messages: Vec<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            messages,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: 2,
            kind: "io",
            messages: vec![format!("{}: {err}", path.display())],
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self::numerical_all(vec![msg.into()])
    }

    pub fn numerical_all(messages: Vec<String>) -> Self {
        Self {
            code: 3,
            kind: "numerical",
            messages,
        }
    }

    fn verification(messages: Vec<String>) -> Self {
        Self {
            code: 4,
            kind: "verification",
            messages,
        }
    }

    fn interrupted(messages: Vec<String>) -> Self {
        Self {
            code: 130,
            kind: "interrupted",
            messages,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn simulate(
    config: PathBuf,
    reps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    cells: Option<usize>,
    full_scale: bool,
) -> Result<(), CliError> {
    let text = fs::read_to_string(&config).map_err(|e| CliError::io(&config, e))?;
    let mut cfg = RunConfig::from_json(&text).map_err(CliError::config_all)?;
    if full_scale {
        cfg.n = 1000;
        cfg.reps = 10_000;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut errs = cfg.validate().err().unwrap_or_default();
    if cells == Some(0) {
        errs.push("--cells must be at least 1".into());
    }
    if threads == Some(0) {
        errs.push("--threads must be at least 1".into());
    }
    if !errs.is_empty() {
        return Err(CliError::config_all(errs));
    }
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {k} threads: {e}")))?;
    }
    let out_dir = out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;

    let mut grid = cfg.cells();
    if let Some(k) = cells {
        grid.truncate(k);
    }
    let base = gen_base_tables(cfg.n, cfg.covariate_dist, cfg.seed)
        .map_err(|e| CliError::numerical(e.to_string()))?;

    ctrlc::set_handler(|| {
        if CANCEL.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt: finishing the current cell, press again to abort");
    })
    .map_err(|e| CliError::config(format!("cannot install interrupt handler: {e}")))?;

    let mc = MonteCarlo {
        reps: cfg.reps,
        seed: cfg.seed,
        level: cfg.level,
        execution: Execution::Parallel,
        keep_replicates: cfg.keep_replicates,
    };
    let total = grid.len();
    let mut done = 0;
    let outcomes = run_factorial(&[base], &grid, &mc, &CANCEL, |o| {
        done += 1;
        match o {
            Ok(c) => eprintln!(
                "cell {done}/{total}: {} alpha {} delta {} gamma {}",
                c.cell.residual_kind.name(),
                c.cell.alpha,
                c.cell.delta,
                c.cell.gamma
            ),
            Err(f) => eprintln!("cell {done}/{total} failed: {}", f.error),
        }
    });
    let complete = outcomes.len() == total;

    let mut csv = Vec::new();
    write_results_csv(&outcomes, cfg.reps, &mut csv)
        .map_err(|e| CliError::numerical(e.to_string()))?;
    write_file(&out_dir.join("results.csv"), &csv)?;
    let doc = serde_json::to_vec_pretty(&results_json(&outcomes)).expect("json serializes");
    write_file(&out_dir.join("results.json"), &doc)?;

    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().err())
        .map(|f| {
            format!(
                "{} alpha {} delta {} gamma {}: {}",
                f.cell.residual_kind.name(),
                f.cell.alpha,
                f.cell.delta,
                f.cell.gamma,
                f.error
            )
        })
        .collect();
    let manifest = json!({
        "tool": "randadj",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg,
        "cells_total": total,
        "cells_completed": outcomes.len(),
        "cells_failed": failures.len(),
        "complete": complete,
        "threads": rayon::current_num_threads(),
    });
    let manifest = serde_json::to_vec_pretty(&manifest).expect("json serializes");
    write_file(&out_dir.join("manifest.json"), &manifest)?;

    if !complete {
        return Err(CliError::interrupted(vec![format!(
            "stopped after {} of {total} cells; partial results in {}",
            outcomes.len(),
            out_dir.display()
        )]));
    }
    if !failures.is_empty() {
        return Err(CliError::numerical_all(failures));
    }
    println!("{total} cells written to {}", out_dir.display());
    Ok(())
}

fn analyze_cmd(input: PathBuf, level: f64, out: Option<PathBuf>) -> Result<(), CliError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::config(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    let file = fs::File::open(&input).map_err(|e| CliError::io(&input, e))?;
    let data = analyze::parse_csv(file)?;
    let report = analyze::analyze(data, level)?;
    print!("{}", analyze::render(&report));
    if let Some(path) = out {
        let doc = serde_json::to_vec_pretty(&report).expect("json serializes");
        write_file(&path, &doc)?;
    }
    Ok(())
}

fn curves(alphas: Vec<f64>, gammas: Vec<f64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut errs = Vec::new();
    for &a in &alphas {
        if !(0.0..1.0).contains(&a) {
            errs.push(format!("alpha must lie in [0, 1), got {a}"));
        }
    }
    for &g in &gammas {
        if !(g > 0.0 && g.is_finite()) {
            errs.push(format!("gamma must be positive, got {g}"));
        }
    }
    if !errs.is_empty() {
        return Err(CliError::config_all(errs));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::numerical(e.to_string());
    w.write_record(["alpha", "gamma", "rl2", "necessary"])
        .map_err(csv_err)?;
    for &g in &gammas {
        for &a in &alphas {
            w.write_record([
                format_real(a),
                format_real(g),
                format_real(rl2(a, g)),
                format_real(necessary_r2(a)),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::numerical(e.to_string()))?;
    match out {
        Some(path) => write_file(&path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn verify(mode: Mode, seed: u64) -> Result<(), CliError> {
    let results: Vec<CheckResult> = match mode {
        Mode::Exact => exact_suite(seed, 100),
        Mode::Statistical => statistical_suite(seed),
    };
    for r in &results {
        println!(
            "{}  {:<28} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(failed))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            reps,
            seed,
            out,
            threads,
            cells,
            full_scale,
        } => simulate(config, reps, seed, out, threads, cells, full_scale),
        Command::Analyze { input, level, out } => analyze_cmd(input, level, out),
        Command::Curves {
            alphas,
            gammas,
            out,
        } => curves(alphas, gammas, out),
        Command::Verify { mode, seed } => verify(mode, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = json!({
                "error": e.kind,
                "exit_code": e.code,
                "messages": e.messages,
            });
            eprintln!("{doc}");
            ExitCode::from(e.code)
        }
    }
}
