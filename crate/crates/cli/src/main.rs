//! `supr` command-line tool.
//!
//! Requested data goes to files or standard output; logging and progress go
//! to standard error. Usage errors exit with status 2, compute errors print
//! `error[category]: message` and exit with status 1.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "supr", version, about = "Sparse part-separable body model tool")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic model container.
    Synth(SynthArgs),
    /// Evaluate the model and write the posed mesh.
    Pose(PoseArgs),
    /// Register the model to a target mesh; prints a JSON report.
    Fit(FitArgs),
    /// Cut a body part out as a standalone container.
    Separate(SeparateArgs),
    /// Shape-component sweep over a target set; writes CSV.
    Eval(EvalArgs),
    /// Evaluate the model with foot contact deformation.
    FootDeform(FootArgs),
    /// Check every container invariant.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Obj,
    Ply,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Toy, conflicts_with_all = ["vertices", "joints"])]
    pub preset: Preset,
    /// Custom vertex count (requires --joints).
    #[arg(long, requires = "joints")]
    pub vertices: Option<usize>,
    /// Custom joint count (requires --vertices).
    #[arg(long, requires = "vertices")]
    pub joints: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    /// Pose file: `{"joint_rotations": [[x,y,z],…], "global_translation": [x,y,z]}`.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Shape coefficients: `{"coefficients": […]}`.
    #[arg(long)]
    pub shape: Option<PathBuf>,
    /// Expression coefficients: `{"coefficients": […]}`.
    #[arg(long)]
    pub expr: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeshOut {
    /// Output mesh path.
    #[arg(long)]
    pub out: PathBuf,
    /// Mesh format; inferred from the --out extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub mesh: MeshOut,
}

#[derive(Debug, Args)]
pub struct FitSettings {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target mesh with the model's vertex order.
    #[arg(long)]
    pub target: PathBuf,
    /// Per-vertex weights: `{"weights": […]}`.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Free shape components (default: all).
    #[arg(long)]
    pub components: Option<usize>,
    #[command(flatten)]
    pub settings: FitSettings,
    #[command(flatten)]
    pub mesh: MeshOut,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A part stored in the container, a label (head, hand-l, hand-r,
    /// foot-l, foot-r, body) or a `.json` file `{"name", "vertex_indices"}`.
    #[arg(long)]
    pub part: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Ascending shape component counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub components: Vec<usize>,
    /// Target meshes.
    #[arg(required_unless_present = "self_test", conflicts_with = "self_test")]
    pub targets: Vec<PathBuf>,
    /// Generate this many targets from the model instead (random shapes in
    /// the rest pose, drawn from --seed).
    #[arg(long)]
    pub self_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub settings: FitSettings,
    /// CSV output path (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FootArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Contact flags: `{"left": [0|1,…], "right": [0|1,…]}`.
    #[arg(long)]
    pub contact: PathBuf,
    #[command(flatten)]
    pub mesh: MeshOut,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
}

pub enum CliError {
    Usage(String),
    Compute(supr::Error),
}

impl From<supr::Error> for CliError {
    fn from(e: supr::Error) -> Self {
        CliError::Compute(e)
    }
}

/// Rejects missing input files before any computation starts.
pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file '{}' does not exist", path.display())))
    }
}

fn category(e: &supr::Error) -> String {
    match e {
        supr::Error::Load(l) if !matches!(l, supr::LoadError::Invalid(_)) => format!("load/{}", l.category()),
        supr::Error::Load(supr::LoadError::Invalid(v)) | supr::Error::Validation(v) => {
            format!("invalid-model/{}", v.kind.as_str())
        }
        other => other.category().to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => Cli::command().error(ErrorKind::ValueValidation, msg).exit(),
        Err(CliError::Compute(e)) => {
            eprintln!("error[{}]: {e}", category(&e));
            ExitCode::from(1)
        }
    }
}
