//! `lanegraph`: build corpora, train and sample generators, score and draw maps.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad flags, inputs or configuration; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "lanegraph", version, about = "Generate and evaluate HD lane maps")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic city maps.
    Synth(SynthArgs),
    /// Cut, decimate and convert maps into a patch dataset.
    Preprocess(PreprocessArgs),
    /// Train a generator on a patch dataset.
    Train(TrainArgs),
    /// Draw maps from a trained generator.
    Sample(SampleArgs),
    /// Score generated maps against reference maps.
    Eval(EvalArgs),
    /// Draw a map as SVG.
    Render(RenderArgs),
    /// Time per-map generation of trained generators.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// City side length, m.
    #[arg(long)]
    size: Option<f64>,
    /// Block size, m.
    #[arg(long)]
    block: Option<f64>,
    #[arg(long)]
    n_cities: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Map JSON files, or directories of them.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Patch side length, m.
    #[arg(long)]
    fov: Option<f64>,
    /// Patches per input map.
    #[arg(long)]
    n: Option<usize>,
    /// Local path width.
    #[arg(long)]
    w: Option<usize>,
    /// Decimation tolerance, rad; calibrated when absent.
    #[arg(long)]
    curvature_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Hdmapgen,
    Plaingen,
    Seqgen,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "hdmapgen")]
    model: ModelKind,
    /// coordinate_first, topology_first or independent.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Teacher-forced steps scored per graph and batch.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Region radius for urban features, m.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Drawing size, px.
    #[arg(long)]
    size: Option<f64>,
    #[arg(long)]
    no_legend: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long = "ckpt", required = true, num_args = 1..)]
    ckpts: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<lanegraph::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Synth(a) => commands::synth(&file, a),
        Command::Preprocess(a) => commands::preprocess(&file, a),
        Command::Train(a) => commands::train(&file, a),
        Command::Sample(a) => commands::sample(&file, a),
        Command::Eval(a) => commands::eval(&file, a),
        Command::Render(a) => commands::render(&file, a),
        Command::Bench(a) => commands::bench(&file, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
