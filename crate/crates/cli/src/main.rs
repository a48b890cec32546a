use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod inputs;
mod output;
mod render;

/// Dynamic tiling for small-object detection: run, evaluate, compare and
/// render.
#[derive(Debug, Parser)]
#[command(name = "dyntile", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one strategy over a set of images.
    Run(RunArgs),
    /// Compare strategies on a generated suite with the simulated detector.
    Bench(BenchArgs),
    /// Score COCO results against COCO ground truth.
    Eval(EvalArgs),
    /// Draw detections, ground truth and tiles onto an image.
    Render(RenderArgs),
    /// Generate a synthetic suite as COCO annotations and optional PNGs.
    Gen(GenArgs),
    /// Serve the color-blob detector over the stdio protocol.
    Worker(WorkerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorKind {
    Sim,
    File,
    Stdio,
}

/// Options shared by every command that resolves a run configuration.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set fusion.alpha=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true))]
struct RunArgs {
    /// Scenes as COCO annotation JSON; doubles as ground truth.
    #[arg(long, value_name = "FILE", group = "input")]
    scenes: Option<PathBuf>,

    /// Directory of PNG or JPEG images.
    #[arg(long, value_name = "DIR", group = "input")]
    images: Option<PathBuf>,

    /// Generate scenes from the `scene.*` configuration keys.
    #[arg(long, group = "input")]
    generate: bool,

    /// Ground truth for `--images`, matched by file name.
    #[arg(long, value_name = "FILE", requires = "images")]
    gt: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "sim")]
    detector: DetectorKind,

    /// Replay file for `--detector file`.
    #[arg(long, value_name = "FILE")]
    replay: Option<PathBuf>,

    /// Executable for `--detector stdio`; arguments follow `--`.
    #[arg(long, value_name = "PROGRAM")]
    detector_cmd: Option<String>,

    #[arg(last = true, value_name = "ARGS")]
    detector_args: Vec<String>,

    /// Strategy, e.g. `fixed-grid` or `dynamic,fi,minimizer`.
    #[arg(long)]
    strategy: Option<dyntile::Strategy>,

    /// Also save every backend response as `replay.json`.
    #[arg(long)]
    record: bool,

    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Worker threads; defaults to the number of processors.
    #[arg(long)]
    jobs: Option<usize>,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Suite configuration (TOML, same keys as `--config`).
    #[arg(long, value_name = "FILE")]
    suite: Option<PathBuf>,

    /// Strategies separated by `;` or `,`; bare modifiers attach to the
    /// previous strategy. Defaults to every baseline and dynamic variant.
    #[arg(long)]
    strategies: Option<String>,

    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    #[arg(long)]
    jobs: Option<usize>,

    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// COCO results JSON.
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,

    /// COCO annotation JSON.
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,

    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    #[arg(long)]
    max_dets: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
struct RenderArgs {
    /// Image to annotate.
    #[arg(long, value_name = "FILE", group = "source")]
    image: Option<PathBuf>,

    /// Render a scene from COCO annotations instead of reading an image.
    #[arg(long, value_name = "FILE", group = "source")]
    scenes: Option<PathBuf>,

    /// Image id within the annotation and result files. Inferred when
    /// there is only one candidate or the file name matches.
    #[arg(long)]
    image_id: Option<u64>,

    /// COCO results to draw.
    #[arg(long, value_name = "FILE")]
    dets: Option<PathBuf>,

    /// COCO annotations to draw.
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,

    /// Run report providing the dynamic tile rects.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,

    /// Overlay the base grid and any dynamic tiles.
    #[arg(long)]
    show_tiles: bool,

    /// Draw only detections at or above this score.
    #[arg(long, default_value_t = 0.0)]
    min_score: f64,

    #[arg(long, value_name = "PNG")]
    out: PathBuf,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Also render every scene to PNG.
    #[arg(long)]
    png: bool,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct WorkerArgs {
    #[arg(long, default_value_t = 10)]
    categories: u32,

    /// Smallest blob reported, in pixels.
    #[arg(long, default_value_t = 4)]
    min_area: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DYNTILE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Bench(a) => commands::bench(a),
        Command::Eval(a) => commands::eval(a),
        Command::Render(a) => commands::render(a),
        Command::Gen(a) => commands::gen(a),
        Command::Worker(a) => commands::worker(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
