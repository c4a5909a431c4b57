//! `cdp`: demo generation, training, evaluation sweeps, single-shot
//! adaptation and projection, and plot-data export.

// `!(x > 0.0)` is kept on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cdp",
    version,
    about = "Cross-gripper diffusion policy toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted demonstrations on the base configuration.
    GenDemos(GenDemosArgs),
    /// Fit a noise predictor to a demonstration file.
    Train(TrainArgs),
    /// Run seeded episodes over a catalog with and without adaptation.
    Eval(EvalArgs),
    /// Map one robot state between two configurations.
    Adapt(AdaptArgs),
    /// Project one Cartesian action chunk onto the constraint set.
    Project(ProjectArgs),
    /// Turn evaluation traces into overlay and correction CSVs.
    PlotExport(PlotExportArgs),
}

#[derive(Args)]
struct CatalogArgs {
    /// Manipulator catalog JSON; the bundled catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct GenDemosArgs {
    #[arg(long, default_value = "push")]
    task: String,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Scale on the executed-action perturbations.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Base configuration (gripper id or robot/gripper).
    #[arg(long, default_value = "G0")]
    base: String,
    /// World config JSON; task defaults when omitted.
    #[arg(long)]
    world: Option<PathBuf>,
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Diffusion steps K.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    WithAp,
    WithoutAp,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    EpisodeWide,
    PlaceOnly,
}

#[derive(Args)]
struct MarginArgs {
    #[arg(long)]
    eps_safe: Option<f64>,
    #[arg(long)]
    eps_task: Option<f64>,
    /// Accumulate the raw rather than corrected prefix along the horizon.
    #[arg(long)]
    as_printed: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Comma-separated configuration ids; every catalog entry when omitted.
    #[arg(long, value_delimiter = ',')]
    configs: Vec<String>,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Placement surface height for this run (pick-place).
    #[arg(long)]
    platform_height: Option<f64>,
    #[arg(long, value_enum)]
    platform_shift: Option<ShiftArg>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[command(flatten)]
    margins: MarginArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long, default_value = "G0")]
    base: String,
    #[arg(long)]
    novel: String,
    /// x,y,z,rx,ry,rz,gripper_width in meters and radians.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state: Vec<f64>,
    /// Map a base-frame state back onto the novel configuration.
    #[arg(long)]
    inverse: bool,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long, default_value = "G0")]
    base: String,
    #[arg(long)]
    novel: String,
    /// Current novel-frame state x,y,z,rx,ry,rz,gripper_width.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state: Vec<f64>,
    /// JSON `{"layout": [...], "actions": [[...], ...]}` of base-frame displacements.
    #[arg(long)]
    chunk: PathBuf,
    #[command(flatten)]
    margins: MarginArgs,
    /// Correction CSV (step, dim, raw, nu, corrected).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Corrected chunk JSON; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotExportArgs {
    /// A traces JSONL file or a directory of them.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDP_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            });
        }
    };
    let result = match cli.command {
        Command::GenDemos(a) => commands::gen_demos(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Project(a) => commands::project(a),
        Command::PlotExport(a) => commands::plot_export(a),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
