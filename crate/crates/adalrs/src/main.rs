//! Command-line experiment runner.
//!
//! Exit codes: 0 on success, 1 on config or input errors, 2 when a run
//! completed flagged as diverged. `ADALRS_LOG` (error|info|debug) controls
//! verbosity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adalrs::harness::{
    compare_runs, convexity_sweep, load_run_artifacts, run_experiment, RawConfig, REPORT_FILE,
};
use adalrs::theory::density_approximate;

#[derive(Parser)]
#[command(name = "adalrs", version, about = "Learning-rate search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write trace.csv, events.json, report.json.
    Run(RunArgs),
    /// Constant-rate grid search over a list of learning rates.
    Grid(GridArgs),
    /// Loss/velocity convexity sweep across a rate grid.
    Sweep(SweepArgs),
    /// Compare a run against a baseline (final loss and crossing step).
    Compare(CompareArgs),
    /// Approximate a target ratio by products of the two scaling factors.
    Density(DensityArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts (overrides the config's
    /// output_dir; default runs/out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',', required = true)]
    lrs: Vec<f64>,
    /// Steps per grid run.
    #[arg(long)]
    steps: u64,
    /// Trailing steps averaged into each run's score (default: whole run).
    #[arg(long)]
    eval_window: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    lrs: Vec<f64>,
    /// Steps per run (default: scheduler.total_steps).
    #[arg(long)]
    steps: Option<u64>,
    /// Comma-separated snapshot step indices.
    #[arg(long, value_delimiter = ',', required = true)]
    snapshots: Vec<u64>,
    /// Window for smoothing and velocity fits.
    #[arg(long, default_value_t = 100)]
    velocity_window: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for sweep_loss.csv and sweep_velocity.csv.
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directory (or report.json path) for the candidate run.
    report_a: PathBuf,
    /// Run directory (or report.json path) for the baseline run.
    report_b: PathBuf,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    /// Target ratio to approximate.
    #[arg(long)]
    target: f64,
    /// Relative tolerance.
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 64)]
    max_exponent: u32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("ADALRS_LOG", "error")
            .write_style("ADALRS_LOG_STYLE"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match dispatch(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Density(args) => cmd_density(args),
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
) -> Result<adalrs::harness::RunConfig, String> {
    let mut raw = RawConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        raw.set("seed", seed.to_string());
    }
    raw.into_run_config().map_err(|e| e.to_string())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let cfg = load_config(&args.config, args.seed)?;
    let out = args
        .out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs/out"));
    let report = run_experiment(&cfg, Some(&out)).map_err(|e| e.to_string())?;
    println!(
        "run complete: {} steps, final loss {:e}, final scale {:e}, {} adjustment(s)",
        report.executed_steps,
        report.final_loss,
        report.final_scale,
        report.events.len()
    );
    if let Some(v) = &report.verdict {
        println!(
            "band verdict: final rate {:e} in ({:e}, {:e}) -> {}",
            v.final_scale_lr,
            v.band_lo,
            v.band_hi,
            if v.inside { "inside" } else { "outside" }
        );
        if let Some(g) = v.gamma_estimate {
            println!("gamma estimate: {g}");
        }
    }
    println!("artifacts written to {}", out.display());
    if report.diverged {
        println!(
            "WARNING: run flagged diverged at step {}",
            report.diverged_at_step.unwrap_or_default()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode, String> {
    let cfg = load_config(&args.config, args.seed)?;
    let eval_window = args.eval_window.unwrap_or(args.steps);
    let outcome = adalrs::oracle::grid_search(
        || {
            cfg.oracle
                .build(cfg.seed)
                .expect("oracle config already validated")
        },
        &args.lrs,
        args.steps,
        eval_window,
    )
    .map_err(|e| e.to_string())?;
    println!("lr,score");
    for (lr, score) in args.lrs.iter().zip(&outcome.final_losses) {
        match score {
            Some(s) => println!("{lr:e},{s:e}"),
            None => println!("{lr:e},diverged"),
        }
    }
    println!("best_lr {:e}", outcome.best_lr);
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let cfg = load_config(&args.config, args.seed)?;
    let steps = args.steps.unwrap_or(cfg.scheduler.total_steps);
    let table = convexity_sweep(
        &cfg.oracle,
        cfg.seed,
        &args.lrs,
        steps,
        &args.snapshots,
        args.velocity_window,
    )
    .map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    std::fs::write(args.out.join("sweep_loss.csv"), table.loss_csv())
        .map_err(|e| e.to_string())?;
    std::fs::write(args.out.join("sweep_velocity.csv"), table.velocity_csv())
        .map_err(|e| e.to_string())?;
    match (table.loss_argmin_index(), table.velocity_argmax_index()) {
        (Some(l), Some(v)) => println!(
            "loss argmin lr {:e} (index {l}); velocity argmax lr {:e} (index {v})",
            table.lr_grid[l], table.lr_grid[v]
        ),
        (Some(l), None) => println!("loss argmin lr {:e} (index {l})", table.lr_grid[l]),
        _ => println!("all rates diverged"),
    }
    println!("unimodal final-loss curve: {}", table.final_loss_is_unimodal());
    println!("tables written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_run_dir(path: &PathBuf) -> PathBuf {
    if path.ends_with(REPORT_FILE) {
        path.parent().map(PathBuf::from).unwrap_or_else(|| path.clone())
    } else {
        path.clone()
    }
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, String> {
    let a = load_run_artifacts(&resolve_run_dir(&args.report_a)).map_err(|e| e.to_string())?;
    let b = load_run_artifacts(&resolve_run_dir(&args.report_b)).map_err(|e| e.to_string())?;
    let cmp = compare_runs(&a, &b).map_err(|e| e.to_string())?;
    println!("final_loss_a {:e}", cmp.final_loss_a);
    println!("final_loss_b {:e}", cmp.final_loss_b);
    println!("final_loss_delta {:e}", cmp.final_loss_delta);
    match (cmp.crossing_step, cmp.crossing_fraction) {
        (Some(step), Some(frac)) => {
            println!("crossing_step {step}");
            println!("crossing_fraction {frac}");
        }
        _ => println!("crossing_step never"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_density(args: DensityArgs) -> Result<ExitCode, String> {
    let result = density_approximate(
        args.alpha,
        args.beta,
        args.target,
        args.eps,
        args.max_exponent,
    )
    .map_err(|e| e.to_string())?;
    println!(
        "m {} n {} achieved {:e} relative_error {:e}",
        result.m, result.n, result.achieved, result.relative_error
    );
    Ok(ExitCode::SUCCESS)
}
