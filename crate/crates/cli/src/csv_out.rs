//! Deterministic CSV artifacts.
//!
//! Schema version 1; columns never reorder within a version. UTF-8, header
//! row, `.` decimal separator (floats printed with Rust's shortest
//! round-trip formatting), empty string for absent optionals.

use std::path::Path;

use anyhow::{Context, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &[&str] = &[
    "iteration",
    "l2",
    "utility_loss",
    "grad_variance",
    "seconds_per_iter",
];
pub const SWEEP_HEADER: &[&str] = &["lambda", "seed", "final_l2"];
pub const ORACLE_HEADER: &[&str] = &[
    "v1",
    "b1",
    "lambda",
    "exact_error",
    "quadrature_error",
    "bound",
];
pub const VARIANCE_HEADER: &[&str] = &["estimator", "lambda", "grad_variance"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}
