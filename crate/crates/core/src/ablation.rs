//! Paired ablation runner.
//!
//! Every (arm, seed) cell trains on the same windowed data with the same
//! initialization draw — verified by hashing both — so per-seed deltas
//! between arms isolate the mode flag. Comparative numbers are reported as
//! seed medians; a diverging cell is marked failed and the run continues.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::init_params;
use crate::dataset::WindowedDataset;
use crate::metrics::{evaluate, MetricsError};
use crate::objective::SegmentSchedule;
use crate::report::{build_run_report, RunReport};
use crate::trainer::{backbone_for, train, TrainConfig, TrainError, TrainMode};

pub const ABLATION_SCHEMA: &str = "ablation/v1";

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("spec needs at least one arm and one seed")]
    EmptySpec,
    #[error("task-count sweep entry {0} must be >= 1")]
    BadSweepEntry(usize),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Objective(#[from] crate::objective::ObjectiveError),
}

/// What to run: arms x seeds on a shared dataset, plus an optional sweep
/// over the number of segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub base: TrainConfig,
    pub arms: Vec<TrainMode>,
    pub seeds: Vec<u64>,
    pub task_count_sweep: Vec<usize>,
    /// Epoch budget for sweep runs; defaults to the base config's total.
    pub sweep_total_epochs: Option<usize>,
    pub horizons: Vec<usize>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            arms: vec![
                TrainMode::OneStage,
                TrainMode::MultistageNoAlpha,
                TrainMode::HandCraftedAlpha,
                TrainMode::Tcl,
            ],
            seeds: vec![1, 2, 3, 4, 5],
            task_count_sweep: Vec::new(),
            sweep_total_epochs: None,
            horizons: vec![2, 4, 8, 10, 14, 25],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub seed: u64,
    /// `None` when the cell trained and evaluated; otherwise the failure.
    pub failure: Option<String>,
    pub avg_error: Option<f64>,
    pub mpjpe_by_horizon: BTreeMap<usize, f64>,
    pub frozen_alphas: Vec<f64>,
    /// Task-1 validation error increase from end of stage 1 to end of the
    /// final stage (the forgetting measure); absent for single-stage runs.
    pub z1_increase: Option<f64>,
    pub forgetting_matrix: Vec<Vec<Option<f64>>>,
    /// Strict increase of the frozen factor sequence; absent when fewer
    /// than two transitions exist.
    pub alpha_monotone: Option<bool>,
    pub init_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub mode: String,
    pub cells: Vec<CellReport>,
    pub median_avg_error: Option<f64>,
    pub median_z1_increase: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedDelta {
    pub arm: String,
    pub baseline: String,
    /// `arm - baseline` per seed; `None` when either cell failed.
    pub per_seed: Vec<Option<f64>>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub tasks: usize,
    pub segment_lengths: Vec<usize>,
    pub per_seed: Vec<Option<f64>>,
    pub median_avg_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema: String,
    pub dataset_hash: String,
    pub seeds: Vec<u64>,
    /// All arms drew bit-identical initial parameters per seed.
    pub init_consistent: bool,
    pub arms: Vec<ArmReport>,
    pub paired_deltas: Vec<PairedDelta>,
    pub task_count_sweep: Vec<SweepRow>,
    /// Fraction of learned-factor cells whose frozen sequence increases.
    pub alpha_monotone_fraction: Option<f64>,
}

impl AblationReport {
    pub fn arm(&self, mode: TrainMode) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.mode == mode.as_str())
    }

    /// Plain-text comparison table; a pure function of the report.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".into(),
        };
        let mut out = String::new();
        let _ = writeln!(out, "dataset hash: {}", self.dataset_hash);
        let _ = writeln!(
            out,
            "seeds: {:?}  paired init draws consistent: {}",
            self.seeds, self.init_consistent
        );
        let _ = writeln!(
            out,
            "\n{:<22} {:>14} {:>16} {:>8}",
            "arm", "median avg err", "median Z1 change", "failed"
        );
        for arm in &self.arms {
            let failed = arm.cells.iter().filter(|c| c.failure.is_some()).count();
            let _ = writeln!(
                out,
                "{:<22} {:>14} {:>16} {:>8}",
                arm.mode,
                fmt(arm.median_avg_error),
                fmt(arm.median_z1_increase),
                failed
            );
        }
        if !self.paired_deltas.is_empty() {
            let _ = writeln!(
                out,
                "\npaired per-seed deltas (arm - {}):",
                self.paired_deltas[0].baseline
            );
            for d in &self.paired_deltas {
                let per: Vec<String> = d.per_seed.iter().map(|&v| fmt(v)).collect();
                let _ = writeln!(
                    out,
                    "{:<22} median {:>9}  [{}]",
                    d.arm,
                    fmt(d.median),
                    per.join(", ")
                );
            }
        }
        if !self.task_count_sweep.is_empty() {
            let _ = writeln!(out, "\n{:<8} {:>14}  segments", "tasks", "median avg err");
            for row in &self.task_count_sweep {
                let _ = writeln!(
                    out,
                    "{:<8} {:>14}  {:?}",
                    row.tasks,
                    fmt(row.median_avg_error),
                    row.segment_lengths
                );
            }
        }
        if let Some(f) = self.alpha_monotone_fraction {
            let _ = writeln!(
                out,
                "\nincreasing frozen-factor trend: {:.0}% of learned-factor runs",
                f * 100.0
            );
        }
        out
    }
}

/// Median over the defined entries; `None` when all are missing.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    present.sort_by(f64::total_cmp);
    let n = present.len();
    Some(if n % 2 == 1 {
        present[n / 2]
    } else {
        0.5 * (present[n / 2 - 1] + present[n / 2])
    })
}

fn fnv64(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn init_hash(config: &TrainConfig, ds: &WindowedDataset) -> String {
    let store = init_params(&backbone_for(config, ds)).expect("valid backbone config");
    let values = store.flat_values();
    let hash = fnv64(values.iter().flat_map(|v| v.to_le_bytes()));
    format!("{hash:016x}")
}

fn run_cell(
    config: TrainConfig,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    test_ds: &WindowedDataset,
    horizons: &[usize],
) -> (CellReport, Option<RunReport>) {
    let seed = config.seed;
    let hash = init_hash(&config, train_ds);
    let attempt = || -> Result<(RunReport, CellReport), AblationError> {
        let outcome = train(config.clone(), train_ds, val_ds)?;
        let eval = evaluate(
            &outcome.store,
            &outcome.backbone,
            &outcome.norm,
            test_ds,
            horizons,
        )?;
        let run = build_run_report(&config, &outcome, &eval);
        let stages = outcome.stage_results.len();
        let z1_increase = if stages >= 2 {
            let first = outcome.stage_results[0].final_task_errors.first().copied();
            let last = outcome.stage_results[stages - 1]
                .final_task_errors
                .first()
                .copied();
            match (first, last) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            }
        } else {
            None
        };
        let alpha_monotone = if run.frozen_alphas.len() >= 2 {
            Some(run.frozen_alphas.windows(2).all(|w| w[0] < w[1]))
        } else {
            None
        };
        let cell = CellReport {
            seed,
            failure: None,
            avg_error: Some(run.avg_error),
            mpjpe_by_horizon: run.mpjpe_by_horizon.clone(),
            frozen_alphas: run.frozen_alphas.clone(),
            z1_increase,
            forgetting_matrix: run.forgetting_matrix.clone(),
            alpha_monotone,
            init_hash: hash.clone(),
        };
        Ok((run, cell))
    };
    match attempt() {
        Ok((run, cell)) => (cell, Some(run)),
        Err(e) => (
            CellReport {
                seed,
                failure: Some(e.to_string()),
                avg_error: None,
                mpjpe_by_horizon: BTreeMap::new(),
                frozen_alphas: Vec::new(),
                z1_increase: None,
                forgetting_matrix: Vec::new(),
                alpha_monotone: None,
                init_hash: hash,
            },
            None,
        ),
    }
}

/// Run every (arm, seed) cell plus the task-count sweep.
///
/// Returns the aggregate report and every successful cell's run report
/// keyed by `(mode, seed)`.
#[allow(clippy::type_complexity)]
pub fn run_ablation(
    spec: &AblationSpec,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    test_ds: &WindowedDataset,
) -> Result<(AblationReport, Vec<((String, u64), RunReport)>), AblationError> {
    if spec.arms.is_empty() || spec.seeds.is_empty() {
        return Err(AblationError::EmptySpec);
    }
    let dataset_hash = format!(
        "{:016x}{:016x}{:016x}",
        train_ds.content_hash(),
        val_ds.content_hash(),
        test_ds.content_hash()
    );

    let mut arms = Vec::new();
    let mut runs = Vec::new();
    for &mode in &spec.arms {
        let mut cells = Vec::new();
        for &seed in &spec.seeds {
            let config = TrainConfig {
                mode,
                seed,
                ..spec.base.clone()
            };
            let (cell, run) = run_cell(config, train_ds, val_ds, test_ds, &spec.horizons);
            if let Some(run) = run {
                runs.push(((mode.as_str().to_string(), seed), run));
            }
            cells.push(cell);
        }
        let median_avg_error = median(&cells.iter().map(|c| c.avg_error).collect::<Vec<_>>());
        let median_z1_increase = median(&cells.iter().map(|c| c.z1_increase).collect::<Vec<_>>());
        arms.push(ArmReport {
            mode: mode.as_str().to_string(),
            cells,
            median_avg_error,
            median_z1_increase,
        });
    }

    // Paired per-seed deltas against the one-stage arm when present,
    // otherwise against the first arm.
    let baseline_idx = spec
        .arms
        .iter()
        .position(|&m| m == TrainMode::OneStage)
        .unwrap_or(0);
    let baseline = arms[baseline_idx].clone();
    let mut paired_deltas = Vec::new();
    for arm in &arms {
        if arm.mode == baseline.mode {
            continue;
        }
        let per_seed: Vec<Option<f64>> = arm
            .cells
            .iter()
            .zip(&baseline.cells)
            .map(|(a, b)| match (a.avg_error, b.avg_error) {
                (Some(x), Some(y)) => Some(x - y),
                _ => None,
            })
            .collect();
        paired_deltas.push(PairedDelta {
            arm: arm.mode.clone(),
            baseline: baseline.mode.clone(),
            median: median(&per_seed),
            per_seed,
        });
    }

    let init_consistent = (0..spec.seeds.len()).all(|i| {
        let mut hashes = arms.iter().map(|a| &a.cells[i].init_hash);
        let first = hashes.next().unwrap();
        hashes.all(|h| h == first)
    });

    let monotone_flags: Vec<Option<f64>> = arms
        .iter()
        .filter(|a| a.mode == TrainMode::Tcl.as_str())
        .flat_map(|a| a.cells.iter())
        .map(|c| c.alpha_monotone.map(|b| if b { 1.0 } else { 0.0 }))
        .collect();
    let defined: Vec<f64> = monotone_flags.iter().flatten().copied().collect();
    let alpha_monotone_fraction = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };

    let task_count_sweep = run_sweep(spec, train_ds, val_ds, test_ds)?;

    Ok((
        AblationReport {
            schema: ABLATION_SCHEMA.to_string(),
            dataset_hash,
            seeds: spec.seeds.clone(),
            init_consistent,
            arms,
            paired_deltas,
            task_count_sweep,
            alpha_monotone_fraction,
        },
        runs,
    ))
}

fn run_sweep(
    spec: &AblationSpec,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    test_ds: &WindowedDataset,
) -> Result<Vec<SweepRow>, AblationError> {
    let mut rows = Vec::new();
    if spec.task_count_sweep.is_empty() {
        return Ok(rows);
    }
    let total_epochs = spec.sweep_total_epochs.unwrap_or_else(|| {
        spec.base
            .resolved_budgets()
            .map(|b| b.iter().sum())
            .unwrap_or(0)
    });
    for &k in &spec.task_count_sweep {
        if k == 0 {
            return Err(AblationError::BadSweepEntry(k));
        }
        let schedule = SegmentSchedule::even_split(train_ds.t_h, train_ds.t_p, k, total_epochs)?;
        let lengths: Vec<usize> = (1..=k)
            .map(|j| {
                let (from, to) = schedule.segment_rows(j);
                to - from
            })
            .collect();
        let mut per_seed = Vec::new();
        for &seed in &spec.seeds {
            let config = TrainConfig {
                mode: TrainMode::Tcl,
                seed,
                segment_lengths: lengths.clone(),
                stage_epochs: schedule.stage_epochs.clone(),
                epoch_budget: crate::trainer::EpochBudget::Cumulative,
                ..spec.base.clone()
            };
            let (cell, _) = run_cell(config, train_ds, val_ds, test_ds, &spec.horizons);
            per_seed.push(cell.avg_error);
        }
        rows.push(SweepRow {
            tasks: k,
            segment_lengths: lengths,
            median_avg_error: median(&per_seed),
            per_seed,
        });
    }
    Ok(rows)
}
