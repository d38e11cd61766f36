//! Command-line surface: dataset generation, training, evaluation, bound
//! verification, ablations, and report rendering.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tcl_core::ablation::{run_ablation, AblationReport, AblationSpec};
use tcl_core::bounds;
use tcl_core::checkpoint;
use tcl_core::dataset::{generate_splits, load_csv, save_csv, WindowedDataset};
use tcl_core::metrics::evaluate;
use tcl_core::report::{build_run_report, load_json, render_run, save_json, RunReport};
use tcl_core::synth::GenerationConfig;
use tcl_core::trainer::{TrainConfig, TrainSession};

#[derive(Parser)]
#[command(
    name = "tcl",
    about = "Temporal continual learning lab for multi-horizon motion forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic windowed dataset (train/val/test CSVs).
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Verify the surrogate-objective log bounds on a dense grid.
    VerifyLemmas(VerifyArgs),
    /// Run a paired ablation across modes and seeds.
    Ablate(AblateArgs),
    /// Render saved JSON reports as plain-text tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generation config JSON; omit for the built-in default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving train.csv, val.csv, test.csv, generation.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Train config JSON; omit for the built-in default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train.csv and val.csv (test.csv optional).
    #[arg(long)]
    data_dir: PathBuf,
    /// Output directory: metrics.csv, stage checkpoints, final checkpoint,
    /// report.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Resume from this checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Horizons for the final report.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 8, 10, 14, 25])]
    horizons: Vec<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding test.csv.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output report JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 8, 10, 14, 25])]
    horizons: Vec<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Grid resolution per axis.
    #[arg(long, default_value_t = 1000)]
    resolution: usize,
    /// Report the cumulative bound for 2..=K stages.
    #[arg(long, default_value_t = 3)]
    max_stages: usize,
    /// Directory receiving bound_grid.csv and bound_summary.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Ablation spec JSON; omit for the built-in default.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Directory holding train.csv, val.csv, test.csv.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output directory: ablation.json plus per-cell run reports.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run report JSON files.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    /// Ablation report JSON file.
    #[arg(long)]
    ablation: Option<PathBuf>,
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("cannot parse {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn load_split(dir: &Path, name: &str) -> Result<WindowedDataset> {
    let path = dir.join(name);
    load_csv(&path).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let config: GenerationConfig = read_config(&args.config)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let [train, val, test] = generate_splits(&config)?;
    for (ds, name) in [
        (&train, "train.csv"),
        (&val, "val.csv"),
        (&test, "test.csv"),
    ] {
        save_csv(ds, &args.out_dir.join(name))?;
    }
    save_json(&config, &args.out_dir.join("generation.json"))?;
    println!(
        "wrote {} ({} train / {} val / {} test windows, {} skipped sequences)",
        args.out_dir.display(),
        train.len(),
        val.len(),
        test.len(),
        train.skipped_sequences + val.skipped_sequences + test.skipped_sequences
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config: TrainConfig = read_config(&args.config)?;
    let train_ds = load_split(&args.data_dir, "train.csv")?;
    let val_ds = load_split(&args.data_dir, "val.csv")?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;

    let mut session = match &args.resume {
        Some(path) => {
            let ckpt = checkpoint::restore(path)
                .with_context(|| format!("cannot restore {}", path.display()))?;
            TrainSession::from_checkpoint(config.clone(), &train_ds, &val_ds, &ckpt)?
        }
        None => TrainSession::new(config.clone(), &train_ds, &val_ds)?,
    };
    session.set_metrics_path(args.out_dir.join("metrics.csv"));

    let mut last_stage = session.stage();
    loop {
        let ran = session.advance(1)?;
        if session.stage() != last_stage {
            // Stage boundary: parameters here are exactly the stage-end
            // state (frozen factor included).
            let path = args.out_dir.join(format!("stage{last_stage}.ckpt"));
            session.save_checkpoint(&path)?;
            last_stage = session.stage();
        }
        if session.finished() && ran == 0 {
            break;
        }
    }
    session.save_checkpoint(&args.out_dir.join("final.ckpt"))?;

    let outcome = session.into_outcome();
    for (i, stage) in outcome.stage_results.iter().enumerate() {
        let alpha = stage
            .alpha_hat
            .map(|a| format!(" frozen factor {a:.4}"))
            .unwrap_or_default();
        let last_val = stage.epochs.last().map(|e| e.val_loss);
        println!(
            "stage {} done: {} epochs, final val loss {}{}",
            i + 1,
            stage.epochs.len(),
            last_val.map_or("-".into(), |v| format!("{v:.5}")),
            alpha
        );
    }

    match load_split(&args.data_dir, "test.csv") {
        Ok(test_ds) if !test_ds.is_empty() => {
            let eval = evaluate(
                &outcome.store,
                &outcome.backbone,
                &outcome.norm,
                &test_ds,
                &args.horizons,
            )?;
            let report = build_run_report(&config, &outcome, &eval);
            save_json(&report, &args.out_dir.join("report.json"))?;
            print!("{}", render_run(&report));
        }
        _ => println!("no test split found; skipping evaluation report"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = checkpoint::restore(&args.checkpoint)
        .with_context(|| format!("cannot restore {}", args.checkpoint.display()))?;
    let test_ds = load_split(&args.data_dir, "test.csv")?;
    let eval = evaluate(
        &ckpt.store,
        &ckpt.backbone,
        &ckpt.norm,
        &test_ds,
        &args.horizons,
    )?;
    let config: TrainConfig = match &ckpt.train_config {
        Some(value) => serde_json::from_value(value.clone())
            .context("checkpoint carries an unreadable train config")?,
        None => bail!(
            "checkpoint {} carries no train config echo",
            args.checkpoint.display()
        ),
    };
    let report = RunReport {
        schema: tcl_core::report::RUN_SCHEMA.to_string(),
        mode: config.mode.as_str().to_string(),
        seed: config.seed,
        config,
        mpjpe_by_horizon: eval.mpjpe_by_horizon.clone(),
        mpjpe_curve: eval.curve.clone(),
        avg_error: eval.avg_error,
        forgetting_matrix: Vec::new(),
        alpha_trajectory: Vec::new(),
        frozen_alphas: ckpt.frozen_alphas.clone(),
    };
    save_json(&report, &args.out)?;
    print!("{}", render_run(&report));
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let report = bounds::verify_bounds(args.resolution, args.max_stages)?;
    bounds::write_gap_grid_csv(args.resolution, &args.out_dir.join("bound_grid.csv"))?;
    bounds::write_summary_json(&report, &args.out_dir.join("bound_summary.json"))?;
    println!(
        "gap over {0}x{0} grid: min {1:.3e} at (a={2:.4}, b={3:.4}), zero-line |max| {4:.3e}",
        report.resolution, report.min.gap, report.min.a, report.min.b, report.zero_line_max_abs
    );
    println!(
        "restricted max {:.9} at (a={:.4}, b={:.4}); target log(3/2) = {:.9}",
        report.restricted_max.gap,
        report.restricted_max.a,
        report.restricted_max.b,
        1.5f64.ln()
    );
    for (k, bound) in (2..).zip(&report.stage_bounds) {
        println!("cumulative bound for {k} stages: {bound:.9}");
    }
    if report.pass {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(1)
    }
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let spec: AblationSpec = read_config(&args.spec)?;
    let train_ds = load_split(&args.data_dir, "train.csv")?;
    let val_ds = load_split(&args.data_dir, "val.csv")?;
    let test_ds = load_split(&args.data_dir, "test.csv")?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let (report, runs) = run_ablation(&spec, &train_ds, &val_ds, &test_ds)?;
    save_json(&report, &args.out_dir.join("ablation.json"))?;
    let runs_dir = args.out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    for ((mode, seed), run) in &runs {
        save_json(run, &runs_dir.join(format!("{mode}_seed{seed}.json")))?;
    }
    print!("{}", report.render());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if args.runs.is_empty() && args.ablation.is_none() {
        bail!("nothing to render: pass --run and/or --ablation");
    }
    for path in &args.runs {
        let report: RunReport = load_json(path)?;
        println!("== {} ==", path.display());
        print!("{}", render_run(&report));
        println!();
    }
    if let Some(path) = &args.ablation {
        let report: AblationReport = load_json(path)?;
        println!("== {} ==", path.display());
        print!("{}", report.render());
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args).map(|()| 0),
        Command::Train(args) => cmd_train(args).map(|()| 0),
        Command::Eval(args) => cmd_eval(args).map(|()| 0),
        Command::VerifyLemmas(args) => cmd_verify(args),
        Command::Ablate(args) => cmd_ablate(args).map(|()| 0),
        Command::Report(args) => cmd_report(args).map(|()| 0),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}
