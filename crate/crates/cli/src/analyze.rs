//! Estimates for one observed dataset with columns `Y, Z, X_1, ..., X_p`.

use std::io::Read;

use randadj::dgp::format_real;
use randadj::harness::{evaluate, EstimatorId};
use randadj::inference::VarianceEstimate;
use randadj::{build_hat_structure, Assignment, CovariateMatrix, ObservedData};
use serde::Serialize;

use crate::CliError;

pub struct Dataset {
    pub y: Vec<f64>,
    pub z: Vec<bool>,
    pub x: Vec<f64>,
    pub p: usize,
}

pub fn parse_csv<R: Read>(input: R) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| CliError::config(format!("cannot read header: {e}")))?
        .clone();
    let mut errs = Vec::new();
    if headers.get(0) != Some("Y") || headers.get(1) != Some("Z") {
        errs.push("the first two columns must be Y and Z".to_string());
    }
    let p = headers.len().saturating_sub(2);
    if p == 0 {
        errs.push("no covariate columns X_1, ..., X_p".to_string());
    }
    for (k, h) in headers.iter().skip(2).enumerate() {
        if h != format!("X_{}", k + 1) {
            errs.push(format!(
                "column {} should be X_{}, found {h:?}",
                k + 3,
                k + 1
            ));
        }
    }
    if !errs.is_empty() {
        return Err(CliError::config_all(errs));
    }

    let mut data = Dataset {
        y: Vec::new(),
        z: Vec::new(),
        x: Vec::new(),
        p,
    };
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errs.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let mut values = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => errs.push(format!(
                    "line {line}, column {}: {field:?} is not a finite number",
                    col + 1
                )),
            }
        }
        if values.len() != record.len() {
            continue;
        }
        let z = if values[1] == 1.0 {
            true
        } else if values[1] == 0.0 {
            false
        } else {
            errs.push(format!(
                "line {line}: Z must be 0 or 1, found {}",
                values[1]
            ));
            continue;
        };
        data.y.push(values[0]);
        data.z.push(z);
        data.x.extend_from_slice(&values[2..]);
    }
    if !errs.is_empty() {
        return Err(CliError::config_all(errs));
    }
    for (arm, count) in [
        ("treated", data.z.iter().filter(|&&z| z).count()),
        ("control", data.z.iter().filter(|&&z| !z).count()),
    ] {
        if count < 2 {
            errs.push(format!(
                "the {arm} arm has {count} units; at least 2 are needed"
            ));
        }
    }
    if data.p >= data.y.len() {
        errs.push(format!(
            "p = {} covariates is not below n = {} units",
            data.p,
            data.y.len()
        ));
    }
    if !errs.is_empty() {
        return Err(CliError::numerical_all(errs));
    }
    Ok(data)
}

#[derive(Debug, Serialize)]
pub struct EstimateRow {
    pub estimator: EstimatorId,
    pub point: Option<f64>,
    pub variance: Option<f64>,
    pub std_error: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub na_reason: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub n: usize,
    pub p: usize,
    pub n1: usize,
    pub level: f64,
    pub estimates: Vec<EstimateRow>,
    pub variance_components: Option<VarianceEstimate>,
}

pub fn analyze(data: Dataset, level: f64) -> Result<Report, CliError> {
    let n = data.y.len();
    let numerical = |e: randadj::Error| CliError::numerical(e.to_string());
    let x = CovariateMatrix::from_rows(n, data.p, &data.x).map_err(numerical)?;
    let hat = build_hat_structure(&x).map_err(numerical)?;
    let assignment = Assignment::new(data.z).map_err(numerical)?;
    let n1 = assignment.n1();
    let observed = ObservedData::new(data.y, assignment, &x, &hat).map_err(numerical)?;
    let eval = evaluate(&observed, level);
    let estimates = EstimatorId::ALL
        .iter()
        .map(|&id| match eval.get(id) {
            Ok(e) => EstimateRow {
                estimator: id,
                point: Some(e.point),
                variance: Some(e.variance),
                std_error: Some((e.variance / n as f64).sqrt()),
                lo: Some(e.lo),
                hi: Some(e.hi),
                na_reason: None,
            },
            Err(err) => EstimateRow {
                estimator: id,
                point: None,
                variance: None,
                std_error: None,
                lo: None,
                hi: None,
                na_reason: Some(err.to_string()),
            },
        })
        .collect();
    Ok(Report {
        n,
        p: x.p(),
        n1,
        level,
        estimates,
        variance_components: eval.variance.ok(),
    })
}

/// Plain-text table of a report.
pub fn render(report: &Report) -> String {
    let mut out = format!(
        "n = {}, p = {}, n1 = {}, level = {}\n",
        report.n, report.p, report.n1, report.level
    );
    out.push_str("estimator,point,variance,lo,hi,note\n");
    for row in &report.estimates {
        let f = |v: Option<f64>| v.map(format_real).unwrap_or_else(|| "NA".into());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.estimator.name(),
            f(row.point),
            f(row.variance),
            f(row.lo),
            f(row.hi),
            row.na_reason.as_deref().unwrap_or("")
        ));
    }
    out
}
