//! Simulation config: one JSON document describing a factorial grid.
//!
//! ```json
//! {
//!   "n": 400,
//!   "r1": 0.35,
//!   "seed": 1,
//!   "reps": 2000,
//!   "level": 0.05,
//!   "covariate_dist": "t3",
//!   "rank_transform": false,
//!   "keep_replicates": false,
//!   "grid": {
//!     "alpha": [0.02, 0.1, 0.2, 0.3, 0.4, 0.7],
//!     "delta": [0.25, 0.75],
//!     "gamma": [0.5, 3.0],
//!     "residual_kind": ["worst_case", "t3"]
//!   }
//! }
//! ```
//!
//! Every key except `grid` has a default. Cells are ordered with
//! `residual_kind` outermost, then `alpha`, `delta` and `gamma`.

use randadj::dgp::{CellConfig, Distribution, ResidualKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub residual_kind: Vec<ResidualKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_r1")]
    pub r1: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_dist")]
    pub covariate_dist: Distribution,
    #[serde(default)]
    pub rank_transform: bool,
    #[serde(default)]
    pub keep_replicates: bool,
    pub grid: Grid,
}

fn default_n() -> usize {
    400
}
fn default_r1() -> f64 {
    0.35
}
fn default_seed() -> u64 {
    1
}
fn default_reps() -> usize {
    2000
}
fn default_level() -> f64 {
    0.05
}
fn default_dist() -> Distribution {
    Distribution::T3
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Vec<String>> {
        serde_json::from_str(text).map_err(|e| vec![format!("config parse error: {e}")])
    }

    /// Cartesian product of the grid factors.
    pub fn cells(&self) -> Vec<CellConfig> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &kind in &g.residual_kind {
            for &alpha in &g.alpha {
                for &delta in &g.delta {
                    for &gamma in &g.gamma {
                        out.push(CellConfig {
                            alpha,
                            delta,
                            gamma,
                            residual_kind: kind,
                            covariate_dist: self.covariate_dist,
                            rank_transform: self.rank_transform,
                            n: self.n,
                            r1: self.r1,
                        });
                    }
                }
            }
        }
        out
    }

    /// All problems at once, so one run reports every mistake.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.reps < 2 {
            errs.push(format!("reps must be at least 2, got {}", self.reps));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            errs.push(format!("level must lie in (0, 1), got {}", self.level));
        }
        let g = &self.grid;
        for (name, len) in [
            ("alpha", g.alpha.len()),
            ("delta", g.delta.len()),
            ("gamma", g.gamma.len()),
            ("residual_kind", g.residual_kind.len()),
        ] {
            if len == 0 {
                errs.push(format!("grid.{name} is empty"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for cell in self.cells() {
            if let Err(e) = cell.validate() {
                let msg = e.to_string();
                if seen.insert(msg.clone()) {
                    errs.push(msg);
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
