//! `multispec`: render, calibrate, register and fuse multispectral frames.
//!
//! Exit codes: 0 success, 1 processing failure, 2 configuration or input
//! file error, 3 insufficient calibration views or calibration/frame
//! mismatch.

mod config;
mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multispec::fusion::{Precedence, ThresholdSpec};

use config::PipelineConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "multispec", version, about = "Multispectral RGB / thermal / UV / depth pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render calibration views, the test scene and ground truth.
    Render(Common),
    /// Detect the target and calibrate every camera.
    Calibrate(Common),
    /// Align thermal and UV images of the scene onto the RGB grid.
    Register(Common),
    /// Highlight hidden features and write the point cloud.
    Fuse(FuseArgs),
    /// Run render, calibrate, register and fuse in sequence.
    Pipeline(FuseArgs),
}

#[derive(Args)]
struct Common {
    /// JSON pipeline configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all stage inputs and outputs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[command(flatten)]
    common: Common,
    /// UV threshold: an intensity such as 200 or a percentile such as p95.
    #[arg(long)]
    threshold_uv: Option<ThresholdSpec>,
    /// Thermal threshold: an intensity such as 40000 or a percentile such as p95.
    #[arg(long)]
    threshold_thermal: Option<ThresholdSpec>,
    /// Which highlight wins where both exceed their threshold.
    #[arg(long)]
    precedence: Option<Precedence>,
}

fn load(common: &Common) -> Result<PipelineConfig, CliError> {
    PipelineConfig::load(common.config.as_deref(), common.seed, &common.out)
}

fn load_fuse(args: &FuseArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = load(&args.common)?;
    if let Some(t) = args.threshold_uv {
        cfg.fusion.threshold_uv = t;
    }
    if let Some(t) = args.threshold_thermal {
        cfg.fusion.threshold_thermal = t;
    }
    if let Some(p) = args.precedence {
        cfg.fusion.precedence = p;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Render(c) => stages::render(&load(&c)?),
        Command::Calibrate(c) => stages::calibrate(&load(&c)?).map(drop),
        Command::Register(c) => stages::register(&load(&c)?),
        Command::Fuse(a) => stages::fuse(&load_fuse(&a)?).map(drop),
        Command::Pipeline(a) => {
            let cfg = load_fuse(&a)?;
            stages::render(&cfg)?;
            stages::calibrate(&cfg)?;
            stages::register(&cfg)?;
            stages::fuse(&cfg).map(drop)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
