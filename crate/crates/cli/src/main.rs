use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "dynotrack",
    version,
    about = "Dynamic obstacle detection and tracking on stereo point clouds"
)]
struct Cli {
    /// Worker threads for intra-frame parallelism (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene description into a dataset directory.
    Simulate {
        scene: PathBuf,
        out_dir: PathBuf,
        /// Override the scene's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pipeline over a dataset.
    Run {
        dataset: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Write the grid layers of every frame to `<out_dir>/grids`.
        #[arg(long)]
        export_grids: bool,
    },
    /// Score tracks against ground truth.
    Evaluate {
        /// `tracks.jsonl` written by `run`.
        tracks: PathBuf,
        /// `ground_truth.jsonl`, or the dataset directory holding it.
        ground_truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accumulated static cloud [default: static_cloud.dpc next to the tracks].
        #[arg(long)]
        static_cloud: Option<PathBuf>,
        /// Reference cloud [default: static_reference.dpc next to the ground truth].
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Report directory [default: the directory of the tracks file].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the per-frame processing on a rendered scene.
    Bench {
        /// Scene file [default: the built-in dense room].
        scene: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        /// Leading frames left out of the statistics.
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Budget for the median core processing time, ms.
        #[arg(long, default_value_t = 50.0)]
        budget_ms: f64,
    },
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Pipeline config (JSON, one block per module); missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the depth-map sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip person-detector fusion.
    #[arg(long)]
    no_detector: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
