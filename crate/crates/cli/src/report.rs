//! JSON report types. Their shapes are published under `schemas/`.

use hbrate::certify::CheckReport;
use hbrate::schemes::RunMetadata;
use hbrate::tuning::RateCertificate;
use serde::{Deserialize, Serialize};

/// Accuracy grid of the comparison table.
pub const EPS_GRID: [f64; 3] = [1e-4, 1e-8, 1e-12];
/// Allowed shortfall of a fitted decrement against a certified one.
pub const RATE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub trace_file: Option<String>,
    pub metadata: RunMetadata,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub certificate: Option<RateCertificate>,
    pub bound_check: Option<CheckReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem_hash: String,
    pub seed: u64,
    pub kappa: Option<f64>,
    pub f_star: Option<f64>,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsEntry {
    pub eps: f64,
    /// First iteration with `f_gap ≤ eps`.
    pub iterations: Option<usize>,
    /// `⌈ln(C·gap₀/ε)/decrement⌉` from the certified or theoretical rate.
    pub predicted: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub scheme: String,
    pub iterations_to: Vec<EpsEntry>,
    pub fitted_decrement: Option<f64>,
    pub r_squared: f64,
    /// `−ln(per_iter_factor)` of the V-FISTA certificate.
    pub certified_decrement: Option<f64>,
    /// Textbook rate for schemes without a certificate: `−ln(1 − κ)` for
    /// Forward-Backward, `√κ/e` for periodic restart.
    pub theoretical_decrement: Option<f64>,
    pub bound_check_pass: Option<bool>,
    /// Fitted decrement at least the certified one minus the tolerance.
    pub rate_consistent: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub eps: f64,
    /// Labels sorted by decreasing predicted decrement.
    pub expected_order: Vec<String>,
    pub iterations: Vec<Option<usize>>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub problem_hash: String,
    pub kappa: Option<f64>,
    pub rows: Vec<ComparisonRow>,
    pub ordering: Option<OrderingCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeValidation {
    pub label: String,
    pub checks: Vec<CheckReport>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem_hash: String,
    pub kappa: Option<f64>,
    pub schemes: Vec<SchemeValidation>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeReport {
    pub problem_hash: String,
    pub alpha_c: f64,
    pub mu: Option<f64>,
    pub m0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub final_gap: f64,
    pub checks: Vec<CheckReport>,
    pub pass: bool,
}
