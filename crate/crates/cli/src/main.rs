mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use report::{CommandReport, Status};

#[derive(Debug, Parser)]
#[command(name = "norm", version, about = "Spectral neural operators on meshed manifolds")]
struct Cli {
    /// Print the command report as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker thread cap; 1 keeps every result bitwise reproducible.
    #[arg(long, global = true, env = "NORM_THREADS", default_value_t = 1)]
    threads: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or inspect meshes.
    #[command(subcommand)]
    Mesh(MeshCmd),
    /// Laplace-Beltrami eigenbases.
    #[command(subcommand)]
    Lbo(LboCmd),
    /// Synthetic datasets.
    #[command(subcommand)]
    Data(DataCmd),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train one model per grid value and tabulate test metrics.
    Sweep(SweepArgs),
    /// Run the built-in verification suites.
    Verify(VerifyArgs),
    /// Write mesh and nodal fields as a legacy VTK file.
    ExportVtk(ExportArgs),
    /// Compare backward gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Subcommand)]
enum MeshCmd {
    /// Unit square with (N+1)^2 vertices and right triangles.
    Grid {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unit square with an interior slit at x = 0.4.
    Notch {
        #[arg(long, default_value_t = 44)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print counts, measure and boundary size.
    Info {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum)]
        format: Option<MeshFormatArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MeshFormatArg {
    Off,
    Obj,
    Mshjson,
}

#[derive(Debug, Subcommand)]
enum LboCmd {
    /// Smallest eigenpairs of the cotangent stiffness against the lumped mass.
    Compute {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum)]
        format: Option<MeshFormatArg>,
        #[arg(long, default_value_t = 128)]
        modes: usize,
        #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
        solver: SolverArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Subcommand)]
enum DataCmd {
    #[command(subcommand)]
    Gen(GenCmd),
}

#[derive(Debug, Subcommand)]
enum GenCmd {
    /// Thresholded GRF coefficient to P1 Darcy solution.
    Darcy {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 1200)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// LBO modes of the GRF expansion.
        #[arg(long, default_value_t = 256)]
        grf_modes: usize,
        /// Amplitude of the outer boundary profile.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f64,
        #[arg(long, default_value_t = 1.0)]
        source: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// GRF input to its heat-semigroup image at time t.
    Heat {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        t: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
struct ModelArgs {
    /// Spectral modes per layer (truncates the bases).
    #[arg(long)]
    modes: Option<usize>,
    /// Temporal modes for Fourier inputs (odd).
    #[arg(long)]
    time_modes: Option<usize>,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, value_enum, default_value_t = ActivationArg::Gelu)]
    activation: ActivationArg,
    /// Hidden width of the lifting map (affine when omitted).
    #[arg(long)]
    p_hidden: Option<usize>,
    /// Hidden width of the projection map; 0 makes it affine.
    #[arg(long, default_value_t = 128)]
    q_hidden: usize,
    /// Index of the layer that changes domain (cross-manifold and temporal inputs).
    #[arg(long)]
    switch_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    Gelu,
    Relu,
    Identity,
}

#[derive(Debug, Clone, Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Halve the learning rate every this many epochs; 0 keeps it constant.
    #[arg(long, default_value_t = 100)]
    halve_every: usize,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Skip per-channel normalisation of inputs and outputs.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    basis_in: PathBuf,
    #[arg(long)]
    basis_out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Write the metrics as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKindArg {
    Modes,
    DataSize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// LBO basis holding at least the largest grid value of modes.
    #[arg(long)]
    basis: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepKindArg::Modes)]
    kind: SweepKindArg,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<usize>,
    /// Repeat each grid point with a POD basis of the training inputs.
    #[arg(long)]
    compare_pod: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// spectrum, bound, gradcheck, tensor-oracle or all.
    #[arg(long, default_value = "all")]
    suite: String,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, value_enum)]
    format: Option<MeshFormatArg>,
    /// Dataset (.nds) or JSON field file `{"channels": c, "values": [...]}`.
    #[arg(long)]
    field: PathBuf,
    /// Sample index when the field file is a dataset.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Add the prediction and its error for dataset samples.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Check a saved model; otherwise a fresh one is built from the flags.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    basis_in: Option<PathBuf>,
    #[arg(long)]
    basis_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, default_value_t = 30)]
    params: usize,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    norm_core::dense::set_threads(cli.threads);

    let name = command_name(&cli.command);
    let start = std::time::Instant::now();
    let result = commands::run(cli.command);
    let report = match result {
        Ok(mut r) => {
            r.elapsed_seconds = start.elapsed().as_secs_f64();
            r
        }
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(commands::CliError::Runtime(e)) => {
            let mut r = CommandReport::new(name);
            r.status = Status::Failed;
            r.error = Some(format!("{e:#}"));
            r.elapsed_seconds = start.elapsed().as_secs_f64();
            r
        }
    };
    report.print(cli.json);
    match report.status {
        Status::Ok => ExitCode::SUCCESS,
        Status::Failed => ExitCode::from(1),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Mesh(MeshCmd::Grid { .. }) => "mesh grid",
        Command::Mesh(MeshCmd::Notch { .. }) => "mesh notch",
        Command::Mesh(MeshCmd::Info { .. }) => "mesh info",
        Command::Lbo(_) => "lbo compute",
        Command::Data(DataCmd::Gen(GenCmd::Darcy { .. })) => "data gen darcy",
        Command::Data(DataCmd::Gen(GenCmd::Heat { .. })) => "data gen heat",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::Verify(_) => "verify",
        Command::ExportVtk(_) => "export-vtk",
        Command::Gradcheck(_) => "gradcheck",
    }
}
