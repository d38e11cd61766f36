//! Run reports: the JSON artifact one training run produces, plus
//! plain-text rendering for runs and ablation comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EvalOutput;
use crate::trainer::{TrainConfig, TrainOutcome};

pub const RUN_SCHEMA: &str = "runreport/v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Everything one run leaves behind: per-horizon errors, the per-stage
/// per-task error matrix, factor trajectory, and the config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub mode: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// MPJPE at the requested horizons (raw units).
    pub mpjpe_by_horizon: BTreeMap<usize, f64>,
    /// MPJPE at every future frame.
    pub mpjpe_curve: Vec<f64>,
    /// Mean of the full curve.
    pub avg_error: f64,
    /// Row per stage, column per task; `null` when the task was not yet
    /// trained at that stage (lower-triangular).
    pub forgetting_matrix: Vec<Vec<Option<f64>>>,
    /// Mean live factor per global epoch; `null` during stage 1.
    pub alpha_trajectory: Vec<Option<f64>>,
    /// Frozen factor per completed transition, in stage order.
    pub frozen_alphas: Vec<f64>,
}

/// Assemble the report for a finished run.
pub fn build_run_report(
    config: &TrainConfig,
    outcome: &TrainOutcome,
    eval: &EvalOutput,
) -> RunReport {
    let k = outcome.schedule.num_segments();
    let forgetting_matrix = outcome
        .stage_results
        .iter()
        .map(|s| {
            let mut row: Vec<Option<f64>> = s.final_task_errors.iter().copied().map(Some).collect();
            row.resize(k, None);
            row
        })
        .collect();
    let alpha_trajectory = outcome
        .stage_results
        .iter()
        .flat_map(|s| s.epochs.iter().map(|e| e.alpha_mean))
        .collect();
    RunReport {
        schema: RUN_SCHEMA.to_string(),
        mode: config.mode.as_str().to_string(),
        seed: config.seed,
        config: config.clone(),
        mpjpe_by_horizon: eval.mpjpe_by_horizon.clone(),
        mpjpe_curve: eval.curve.clone(),
        avg_error: eval.avg_error,
        forgetting_matrix,
        alpha_trajectory,
        frozen_alphas: outcome.frozen_alphas.clone(),
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(value).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, json).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    }
}

/// Plain-text summary of one run.
pub fn render_run(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run: mode={} seed={}", report.mode, report.seed);
    let _ = writeln!(
        out,
        "avg error over {} frames: {:.4}",
        report.mpjpe_curve.len(),
        report.avg_error
    );
    let _ = writeln!(out, "\nhorizon   mpjpe");
    for (h, v) in &report.mpjpe_by_horizon {
        let _ = writeln!(out, "{h:>7}   {v:.4}");
    }
    if !report.frozen_alphas.is_empty() {
        let alphas: Vec<String> = report
            .frozen_alphas
            .iter()
            .map(|a| format!("{a:.4}"))
            .collect();
        let _ = writeln!(out, "\nfrozen factors: [{}]", alphas.join(", "));
    }
    if !report.forgetting_matrix.is_empty() {
        let k = report
            .forgetting_matrix
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let _ = writeln!(out, "\nper-task validation error at each stage end:");
        let header: Vec<String> = (1..=k).map(|t| format!("{:>9}", format!("Z{t}"))).collect();
        let _ = writeln!(out, "stage {}", header.join(" "));
        for (i, row) in report.forgetting_matrix.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|&v| format!("{:>9}", fmt_cell(v))).collect();
            let _ = writeln!(out, "S{:<4} {}", i + 1, cells.join(" "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            schema: RUN_SCHEMA.into(),
            mode: "tcl".into(),
            seed: 5,
            config: TrainConfig::default(),
            mpjpe_by_horizon: [(2, 0.1), (10, 0.5)].into_iter().collect(),
            mpjpe_curve: vec![0.1, 0.3, 0.5],
            avg_error: 0.3,
            forgetting_matrix: vec![vec![Some(0.11), None], vec![Some(0.12), Some(0.4)]],
            alpha_trajectory: vec![None, Some(0.2)],
            frozen_alphas: vec![0.25],
        }
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = sample_report();
        save_json(&report, &path).unwrap();
        let loaded: RunReport = load_json(&path).unwrap();
        assert_eq!(loaded.avg_error, report.avg_error);
        assert_eq!(loaded.forgetting_matrix, report.forgetting_matrix);
        assert_eq!(loaded.mpjpe_by_horizon, report.mpjpe_by_horizon);
    }

    #[test]
    fn rendering_is_pure_and_complete() {
        let report = sample_report();
        let a = render_run(&report);
        let b = render_run(&report);
        assert_eq!(a, b);
        assert!(a.contains("avg error"));
        assert!(a.contains("Z1"));
        assert!(a.contains("S2"));
        assert!(a.contains("-"));
    }
}
