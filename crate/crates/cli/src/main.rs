mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

/// Sparse steerable convolution toolkit.
#[derive(Debug, Parser)]
#[command(name = "ssconv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure equivariance of a network under lattice and generic rotations.
    CheckEquivariance(EquivarianceArgs),
    /// Time sparse convolutions against the dense reference.
    Bench(BenchArgs),
    /// Write sampled steerable basis kernels as CSV.
    KernelDump(KernelDumpArgs),
    /// Train the toy pose model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a pose estimator on held-out synthetic scenes.
    Eval(EvalArgs),
    /// Convert between ASCII point clouds and SSTF sparse tensors.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct EquivarianceArgs {
    /// Layer config file; the built-in backbone when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error under lattice rotations.
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
    /// Number of random inputs.
    #[arg(long, default_value_t = 20)]
    pub inputs: usize,
    /// Side length of the random input grids.
    #[arg(long, default_value_t = 12)]
    pub grid: u32,
    /// Fraction of active cells in the random inputs.
    #[arg(long, default_value_t = 0.1)]
    pub occupancy: f64,
    /// Random continuous rotations per input.
    #[arg(long, default_value_t = 4)]
    pub continuous: usize,
    /// Check a single input with no active sites.
    #[arg(long)]
    pub empty_input: bool,
    /// Add non-steerable noise of this scale to every kernel.
    #[arg(long, value_name = "SCALE")]
    pub debug_break_kernel: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Layer config file; the built-in backbone when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub occupancy: f64,
    #[arg(long, default_value_t = 64)]
    pub grid: u32,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with failure when the speedup is below this factor.
    #[arg(long)]
    pub min_speedup: Option<f64>,
}

#[derive(Debug, Args)]
pub struct KernelDumpArgs {
    /// Output order.
    #[arg(long)]
    pub k: u32,
    /// Input order.
    #[arg(long)]
    pub l: u32,
    #[arg(long, default_value_t = 3)]
    pub size: usize,
    /// Comma-separated radial centers in voxels.
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<f64>>,
    /// Gaussian radial width.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Print the loss every this many iterations to stderr (0 for never).
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint of a trained model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// TOML training config; its scene settings and architecture apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluation stream seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Overrides the config refinement rounds.
    #[arg(long)]
    pub refine_iters: Option<usize>,
    /// Estimator: model, oracle or identity.
    #[arg(long, default_value = "model")]
    pub estimator: String,
    /// Also report every refinement round up to --refine-iters.
    #[arg(long)]
    pub sweep: bool,
    /// Per-scene errors as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `.sstf` writes a sparse tensor, anything else an ASCII cloud.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid side length when voxelizing.
    #[arg(long, default_value_t = 32)]
    pub resolution: u32,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::CheckEquivariance(a) => commands::check_equivariance(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::KernelDump(a) => commands::kernel_dump(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Convert(a) => commands::convert(&a),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(Failure::Check(report)) => {
            print!("{report}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
