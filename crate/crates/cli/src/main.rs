use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod settings;

#[derive(Parser, Debug)]
#[command(name = "srec", version, about = "Streaming recommender with continuous-time latent factors")]
pub struct Cli {
    /// Seed for every random choice (simulation, reference times, filter start points).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (repeatable). SREC_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a raw ratings file to the canonical event log.
    Ingest(IngestArgs),
    /// Fit noise and drift variances by variational EM.
    Train(TrainArgs),
    /// Replay an event log through the online filter and save its state.
    Stream(StreamArgs),
    /// Prequential RMSE over disjoint one-week windows.
    Eval(EvalArgs),
    /// Sample an event log and true latents from the model.
    Simulate(SimulateArgs),
    /// Correlation decay and trajectory exports.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Movielens,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "movielens")]
    pub format: Format,
    #[arg(long)]
    pub output: PathBuf,
}

/// How rating levels read as stars and where likeness is centered.
#[derive(Args, Debug, Clone, Default)]
pub struct ScaleArgs {
    /// Number of rating levels (default: 10 if any level exceeds 5, else 5).
    #[arg(long)]
    pub levels: Option<usize>,
    /// Stars per level (default: 0.5 for 10 levels, else 1).
    #[arg(long)]
    pub star_step: Option<f64>,
    /// Star value mapped to likeness 0 (default: mean of the base-training ratings).
    #[arg(long)]
    pub center: Option<f64>,
    /// Share of ratings forming the base-training prefix.
    #[arg(long)]
    pub split_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Initial parameters; defaults are used when absent or missing.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub params_out: PathBuf,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Latent dimension override.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Fit on the base-training prefix only.
    #[arg(long)]
    pub base_only: bool,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub snapshot_out: PathBuf,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Test window length in days.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[arg(long)]
    pub sigma2_e: Option<f64>,
    #[arg(long)]
    pub sigma2_u: Option<f64>,
    #[arg(long)]
    pub sigma2_v: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub initial_users: Option<usize>,
    #[arg(long)]
    pub initial_items: Option<usize>,
    /// Births per day.
    #[arg(long)]
    pub user_birth_rate: Option<f64>,
    #[arg(long)]
    pub item_birth_rate: Option<f64>,
    /// Ratings per day per live user.
    #[arg(long)]
    pub rating_rate: Option<f64>,
    /// Length of the simulated period in days.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Subcommand, Debug)]
pub enum Analysis {
    /// Averaged squared autocorrelation of latents against lag, with half-times.
    CorrDecay(CorrDecayArgs),
    /// Posterior mean topics and pair likeness sampled over time.
    Trajectories(TrajectoryArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideArg {
    User,
    Item,
}

#[derive(Args, Debug)]
pub struct CorrDecayArgs {
    /// Saved filter state; alternatively give --events and --params.
    #[arg(long, conflicts_with_all = ["events", "params"])]
    pub snapshot: Option<PathBuf>,
    #[arg(long, requires = "params")]
    pub events: Option<PathBuf>,
    #[arg(long, requires = "events")]
    pub params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "user")]
    pub side: SideArg,
    /// Reference day (default: the state's current time).
    #[arg(long)]
    pub at: Option<f64>,
    #[arg(long, default_value_t = 3650.0)]
    pub max_days: f64,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of evenly spaced sampling instants.
    #[arg(long, default_value_t = 50)]
    pub instants: usize,
    /// Comma-separated user names.
    #[arg(long, value_delimiter = ',')]
    pub users: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    /// Comma-separated `user:item` pairs.
    #[arg(long, value_delimiter = ',')]
    pub pairs: Vec<String>,
    /// Also emit per-dimension population averages.
    #[arg(long)]
    pub averages: bool,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SREC_LOG", default)).format_timestamp(None).init();
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim()),
    };
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
