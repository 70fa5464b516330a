use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use ttf::harness::{
    self, parse_values, write_synth, FrameSource, HarnessError, RunConfig, SweepParam,
};

#[derive(Parser)]
#[command(name = "ttf", version, about = "Temporal token fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the encoder, projections and synthetic frames.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a sequence and write report.json (plus masks/tokens if enabled).
    Run(Common),
    /// Write the configured synthetic sequence as frame_NNNNNN.ppm files.
    Synth(Common),
    /// Re-run the sequence for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// K, tau or k (or keyframe_interval, pixel_threshold, top_k).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Replay a run directory through selective Q/K/V projection.
    VerifyQreuse {
        /// Run directory containing report.json and tokens.ttft.
        #[arg(long)]
        report: PathBuf,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), HarnessError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set output_dir".into()))?;
    Ok((cfg, out))
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run(common) => {
            let (cfg, out) = load(&common)?;
            let outcome = harness::execute_run(&cfg, &out)?;
            let a = &outcome.report.aggregates;
            println!(
                "{} steps, {} keyframes, mean fusion rate {:.4} (non-keyframe {:.4}), saved multiplications {}",
                a.step_count,
                a.keyframe_count,
                a.mean_fusion_rate_all,
                a.mean_fusion_rate_non_keyframe,
                a.total_saved_multiplications
            );
        }
        Command::Synth(common) => {
            let (cfg, out) = load(&common)?;
            let FrameSource::Synth(spec) = &cfg.source else {
                return Err(HarnessError::Config("synth needs synth.* keys in the config".into()));
            };
            let frames = write_synth(spec, &out)?;
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Sweep { common, param, values } => {
            let (cfg, out) = load(&common)?;
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let summary = harness::execute_sweep(&cfg, param, &values, &out)?;
            print!("{}", summary.to_csv());
        }
        Command::VerifyQreuse { report } => {
            let steps = harness::verify_report_dir(&report)?;
            let saved: u64 = steps.iter().map(|s| s.saved_multiplications).sum();
            println!(
                "{} steps verified bit-exact for Q, K and V; saved multiplications {saved}",
                steps.len()
            );
            info!("wrote {}", Path::new(&report).join(harness::QREUSE_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TTF_LOG", "off")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
