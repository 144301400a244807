use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynscene::cli::{self, CliError, RunConfig};

/// Poses, intrinsics, video depth and motion masks from pairwise pointmaps.
///
/// Log verbosity follows RUST_LOG (e.g. RUST_LOG=info).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Temporal window size.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Stride between window offsets beyond the adjacent frame.
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Static-mask threshold in pixels.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Depth alignment: scale_shift, scale, per_frame_median or none.
    #[arg(long, global = true, value_parser = cli::parse_align_mode)]
    align: Option<dynscene::evalkit::DepthAlignmentMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to a directory.
    Synth { out: Option<PathBuf> },
    /// Reconstruct a scene directory.
    Align { input: Option<PathBuf>, out: Option<PathBuf> },
    /// ATE and RPE between two TUM trajectories.
    EvalPose {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = 1)]
        delta: usize,
    },
    /// Depth metrics between two directories of depth containers.
    EvalDepth { pred: PathBuf, gt: PathBuf },
    /// Static mask for one pair.
    Mask {
        pair_self: PathBuf,
        pair_other: PathBuf,
        flow: PathBuf,
        out: PathBuf,
    },
    /// Grid container to CSV or back.
    Convert { input: PathBuf, output: PathBuf },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = common.window {
        config.window = v;
    }
    if let Some(v) = common.stride {
        config.stride = v;
    }
    if let Some(v) = common.iterations {
        config.schedule.iterations = v;
    }
    if let Some(v) = common.alpha {
        config.alpha = Some(v);
    }
    if let Some(v) = common.align {
        config.align = v;
    }
    Ok(config)
}

fn required<'a>(arg: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    arg.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| CliError::Usage(format!("missing {what} path (argument or `{what}` config key)")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { out } => {
            let s = cli::cmd_synth(&config, required(&out, &config.output, "output")?)?;
            println!("frames = {}\nedges = {}\ndynamic_fraction = {:?}", s.frames, s.edges, s.dynamic_fraction);
        }
        Command::Align { input, out } => {
            let input = required(&input, &config.input, "input")?;
            let s = cli::cmd_align(&config, input, required(&out, &config.output, "output")?)?;
            println!(
                "frames = {}\nedges = {}\niterations = {}\nfinal_loss = {:?}\nfailed_edges = {}",
                s.frames,
                s.edges,
                s.iterations,
                s.final_loss,
                s.failed_edges.len()
            );
        }
        Command::EvalPose { pred, gt, delta } => {
            print!("{}", cli::cmd_eval_pose(&pred, &gt, delta)?.to_text());
        }
        Command::EvalDepth { pred, gt } => {
            print!("{}", cli::depth_report_text(&cli::cmd_eval_depth(&pred, &gt, config.align)?));
        }
        Command::Mask {
            pair_self,
            pair_other,
            flow,
            out,
        } => {
            print!("{}", cli::cmd_mask(&pair_self, &pair_other, &flow, None, &config, &out)?.to_text());
        }
        Command::Convert { input, output } => cli::cmd_convert(&input, &output)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
