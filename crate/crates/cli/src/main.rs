use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lftgen::pipeline::{run, PipelineConfig, Stage};
use lftgen::Error;

/// Build an uncertain LFT model of a nonlinear system, stage by stage.
///
/// Stages: identify, lpvify, lftize, gendata, reduce, bound, analyze,
/// pipeline (all of them in order) and validate.
#[derive(Debug, Parser)]
#[command(name = "lftgen", version)]
struct Args {
    /// Stage to run.
    #[arg(value_name = "STAGE")]
    command: Option<Stage>,

    /// Same as the positional stage.
    #[arg(long, value_name = "NAME", conflicts_with = "command")]
    stage: Option<Stage>,

    /// TOML config, or a previous run's manifest.json. Defaults to the built-in pendulum.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Artifact directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Comma-separated bottleneck sizes, e.g. `0,1,2`.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    m: Option<Vec<usize>>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact { .. } => 2,
        Error::Validation { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let stage = args.command.or(args.stage).unwrap_or(Stage::Pipeline);

    let mut config = match &args.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => PipelineConfig::pendulum(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(m) = args.m {
        config.cfnn.m = Some(m);
    }

    match run(stage, &config, &args.out) {
        Ok(manifest) => {
            let total: f64 = manifest.stages.iter().map(|s| s.wall_time).sum();
            eprintln!("{} finished in {total:.1} s; artifacts in {}", stage.name(), args.out.display());
            if stage == Stage::Analyze || stage == Stage::Pipeline {
                if let Ok(text) = std::fs::read_to_string(args.out.join("gain_report.txt")) {
                    print!("{text}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
