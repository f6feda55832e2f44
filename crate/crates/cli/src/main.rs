use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spineage_cli::config::PipelineConfig;
use spineage_cli::{execute, parse_stage_list};

/// Spine-age estimation pipeline.
#[derive(Parser)]
#[command(name = "spineage", version, about)]
struct Args {
    /// Stages to run in order: generate, cluster, split, train, evaluate,
    /// biomarkers, gradcam, ablation — or `all` for the seven-stage pipeline.
    #[arg(required = true)]
    stages: Vec<String>,

    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Rerun stages even when their inputs are unchanged.
    #[arg(long)]
    force: bool,

    /// Override the master seed from the configuration file.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let stages = match parse_stage_list(&args.stages) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut config = match PipelineConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    match execute(&config, &stages, args.force) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
