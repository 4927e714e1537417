//! `mapprior` command-line entry point.

mod cmd;
mod manifest;
mod mapsel;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mapprior::MotionProfile;

#[derive(Parser)]
#[command(name = "mapprior", version, about = "Learned map priors for odometry-only indoor localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
pub struct Common {
    /// Built-in map name (corridor_rooms, corridor, open) or a .pgm path.
    #[arg(long, default_value = "corridor_rooms")]
    pub map: String,
    /// Seed for all randomness of the command.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON config file (or a manifest of a previous run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Profile {
    Pedestrian,
    Wheeled,
}

impl From<Profile> for MotionProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Pedestrian => MotionProfile::Pedestrian,
            Profile::Wheeled => MotionProfile::Wheeled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ours,
    Heuristic,
    Crf,
    Pdr,
    Odom,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Heuristic => "heuristic",
            Method::Crf => "crf",
            Method::Pdr => "pdr",
            Method::Odom => "odom",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth trajectories, noisy odometry and step events.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<Profile>,
        #[arg(long)]
        n_trajs: Option<usize>,
        /// Seconds per trajectory.
        #[arg(long)]
        duration: Option<usize>,
    },
    /// Train the prior network on simulated ground-truth trajectories.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batches_per_epoch: Option<usize>,
    },
    /// Localize odometry streams with one method.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        /// Odometry CSV files (`<name>_odometry.csv`).
        #[arg(long, required = true, num_args = 1..)]
        odom: Vec<PathBuf>,
        /// Weights manifest, required by `ours`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        profile: Option<Profile>,
        /// Start pose `x,y,theta`; defaults to the first pose of the sibling
        /// `<name>_gt.csv`.
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
    },
    /// Score estimated trajectories against ground truth.
    Eval {
        /// Directory of `<name>_<method>.csv` estimates.
        #[arg(long)]
        est: PathBuf,
        /// Directory of `<name>_gt.csv` ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "corridor_rooms")]
        map: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common, profile, n_trajs, duration } => {
            cmd::simulate::run(&common, profile.map(Into::into), n_trajs, duration)
        }
        Command::Train { common, data, epochs, batches_per_epoch } => {
            cmd::train::run(&common, &data, epochs, batches_per_epoch)
        }
        Command::Localize { common, method, odom, weights, profile, start } => cmd::localize::run(
            &common,
            method,
            &odom,
            weights.as_deref(),
            profile.map(Into::into),
            start.as_deref(),
        ),
        Command::Eval { est, gt, map, seed, config, out } => {
            cmd::eval::run(&Common { map, seed, config, out }, &est, &gt)
        }
    }
}

/// Single-line JSON error record for standard error.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<mapprior::Error>())
        .map(error_kind)
        .unwrap_or("cli");
    let chain: Vec<String> = err.chain().map(|e| e.to_string().replace('\n', " ")).collect();
    serde_json::json!({ "error": kind, "message": chain.join(": ") }).to_string()
}

fn error_kind(e: &mapprior::Error) -> &'static str {
    use mapprior::Error::*;
    match e {
        Io { .. } => "io",
        MalformedMap(_) | InvalidMeta(_) => "map",
        CropTooLarge { .. } | KernelTooLarge { .. } | Shape(_) => "shape",
        NoFreeSpace(_) | Unreachable(_) => "simulation",
        StreamTooShort { .. } | StreamMismatch(_) | NoOverlap => "stream",
        UnsupportedOp(_) | Weights(_) | MissingWeights => "weights",
        Config(_) => "config",
        EmptyDataset => "empty_dataset",
        Diverged { .. } => "diverged",
        ZeroWeight | ZeroMass => "degenerate",
        DisconnectedStart => "disconnected_start",
        Csv(_) | Json(_) => "format",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
