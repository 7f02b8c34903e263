use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use slicesplat::data::PhantomKind;
use slicesplat::trainer::LossKind;
use slicesplat::ExecMode;

pub const PORT_ENV: &str = "SLICESPLAT_PORT";

#[derive(Debug, Parser)]
#[command(name = "slicesplat", version, about = "Slice-supervised 3D Gaussian reconstruction")]
pub struct Cli {
    /// TOML file with default flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic volume.
    Phantom(PhantomArgs),
    /// Fit a Gaussian cloud to slices of a volume or a saved dataset.
    Train(TrainArgs),
    /// Score a checkpoint on orthogonal views of a volume.
    Eval(EvalArgs),
    /// Render one slice at a given pose.
    Render(RenderArgs),
    /// Serve slices over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct PhantomArgs {
    #[arg(long, default_value = "shells")]
    pub kind: PhantomKind,
    /// Edge length, or `D,H,W`.
    #[arg(long, default_value = "64", value_parser = parse_dims)]
    pub dims: [usize; 3],
    /// Voxel size in mm.
    #[arg(long, default_value_t = 0.6)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output base path; writes `<base>.raw` and `<base>.json`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Ground-truth volume to slice.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub volume: Option<PathBuf>,
    /// Directory written by `--save-dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of axial slices taken from the volume (default: all planes).
    #[arg(long)]
    pub n_slices: Option<usize>,
    /// Random tilt about the in-plane axes, in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub perturb_deg: f64,
    /// Use a random free-hand sweep of this many slices instead of an axial stack.
    #[arg(long)]
    pub sweep: Option<usize>,
    #[arg(long, default_value_t = 30.0)]
    pub max_tilt_deg: f64,
    /// Fraction of slices used for training; the rest are held out.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Write the generated dataset to this directory.
    #[arg(long)]
    pub save_dataset: Option<PathBuf>,
    /// desk, 100k, 200k, 300k or 2m.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub n_gaussians: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub p_mass: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub ssim_weight: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub exec_mode: Option<ExecArg>,
    #[arg(long)]
    pub time_budget_mins: Option<f64>,
    /// Checkpoint output path.
    #[arg(short, long)]
    pub output: PathBuf,
    /// JSON-lines log path (default: `<output>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LossArg {
    L1Ssim,
    L2,
}

impl From<LossArg> for LossKind {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::L1Ssim => LossKind::L1Ssim,
            LossArg::L2 => LossKind::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ExecArg {
    Sequential,
    Parallel,
    Deterministic,
}

impl From<ExecArg> for ExecMode {
    fn from(v: ExecArg) -> Self {
        match v {
            ExecArg::Sequential => ExecMode::Sequential,
            ExecArg::Parallel => ExecMode::Parallel,
            ExecArg::Deterministic => ExecMode::Deterministic,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Score axial, coronal and sagittal views of this volume.
    #[arg(long, required_unless_present = "dataset")]
    pub volume: Option<PathBuf>,
    /// Score the held-out slices of a dataset saved by `train --save-dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub n_per_axis: usize,
    /// Exit with status 2 if any reported mean SSIM is lower.
    #[arg(long)]
    pub min_ssim: Option<f64>,
    /// Also write the report here.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct PoseArgs {
    /// Rotation about x in degrees (applied first).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub rx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ry: f64,
    /// Rotation about z in degrees (applied last).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub rz: f64,
    /// Translation in mm.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ty: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tz: f64,
    /// Row-major 3×3 rotation then translation, 12 comma-separated numbers;
    /// overrides the Euler flags.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    /// 8-bit PGM output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write little-endian float32 pixels here.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ground-truth volume enabling `/gt_slice`.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = PORT_ENV, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad dimension '{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [n] => Ok([*n; 3]),
        [d, h, w] => Ok([*d, *h, *w]),
        _ => Err(format!("expected N or D,H,W, got '{s}'")),
    }
}
