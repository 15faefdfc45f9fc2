//! `poretail`: batch pipeline from segmented pore tables to largest-pore
//! predictions and coupon/part comparisons. Commands talk to each other only
//! through the files they write.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poretail::UncertaintyMode;

mod commands;
mod config;
mod error;

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "poretail", version, about = "Pore tail fitting and largest-pore prediction")]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a pore table and dump it with derived size and shape columns.
    Geom(GeomArgs),
    /// Scan thresholds, fit the tail and write the fit report.
    Fit(FitArgs),
    /// Monte Carlo distribution of the largest pore in a volume.
    Predict(PredictArgs),
    /// Place observed largest pores within a predicted distribution.
    Compare(CompareArgs),
    /// Largest-pore summary over a list of volumes.
    Sweep(SweepArgs),
    /// Generate a synthetic specimen, and optionally brute-force maxima.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct SpecimenArgs {
    #[arg(long)]
    specimen_id: Option<String>,
    /// Scanned volume of the specimen in mm³.
    #[arg(long)]
    scanned_volume: Option<f64>,
    #[arg(long)]
    geometry_label: Option<String>,
    #[arg(long)]
    build_x: Option<f64>,
    #[arg(long)]
    build_y: Option<f64>,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Required for every stochastic command.
    #[arg(long)]
    seed: Option<u64>,
    /// none, poisson_only or all.
    #[arg(long)]
    mode: Option<UncertaintyMode>,
    /// Sample count for all three axes.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    count_samples: Option<usize>,
    #[arg(long)]
    param_samples: Option<usize>,
    #[arg(long)]
    p_samples: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Worker threads (0: all cores). Does not change results.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct GeomArgs {
    /// Pore table (CSV).
    table: Option<PathBuf>,
    #[command(flatten)]
    specimen: SpecimenArgs,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Pore table or dataset dump (CSV).
    table: Option<PathBuf>,
    #[command(flatten)]
    specimen: SpecimenArgs,
    /// Fixed threshold in µm instead of automatic selection.
    #[arg(long)]
    threshold: Option<f64>,
    /// Candidate thresholds in µm, comma-separated.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<f64>,
    /// select, mle or mom.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    min_tail: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Volume of interest in mm³.
    #[arg(long, allow_negative_numbers = true)]
    volume: Option<f64>,
    #[command(flatten)]
    mc: McArgs,
    /// Rerun with the volume and settings stored in a distribution file.
    #[arg(long, conflicts_with_all = ["volume", "seed", "mode", "samples", "count_samples", "param_samples", "p_samples", "bins"])]
    replay: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    distribution: Option<PathBuf>,
    /// Observed largest pore in µm.
    #[arg(long, conflicts_with = "observations")]
    observed: Option<f64>,
    #[arg(long, default_value = "part")]
    part_id: String,
    /// CSV with `largest_um` and optional `part_id`, `x_mm`, `y_mm` columns.
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Coupon build-plate position `x,y` in mm.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    coupon_pos: Option<Vec<f64>>,
    /// Part build-plate position `x,y` in mm, for --observed.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    part_pos: Option<Vec<f64>>,
    /// Plate extents `x_min,x_max,y_min,y_max` in mm.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    plate: Option<Vec<f64>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Ascending volumes in mm³, comma-separated.
    #[arg(long, value_delimiter = ',')]
    volumes: Vec<f64>,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Ground truth TOML: lambda_above, lambda_below, volume_mm3, [bulk], [tail].
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "synthetic")]
    specimen_id: String,
    /// Also simulate the largest pore in volumes of this size (mm³).
    #[arg(long)]
    largest_volume: Option<f64>,
    #[arg(long, default_value_t = 1000, requires = "largest_volume")]
    replications: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Geom(a) => commands::geom(a, &cfg),
        Command::Fit(a) => commands::fit(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::Compare(a) => commands::compare(a, &cfg),
        Command::Sweep(a) => commands::sweep(a, &cfg),
        Command::Simulate(a) => commands::simulate(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("poretail: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
