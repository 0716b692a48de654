use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use shoalguide_core::analytics::DEFAULT_BINS;
use shoalguide_core::TargetEnd;

#[derive(Debug, Parser)]
#[command(name = "shoalguide", version, about = "Train, evaluate and deploy fish-school guidance policies")]
pub struct Cli {
    /// Run configuration (TOML). Falls back to $SHOALGUIDE_CONFIG, then to
    /// built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one policy and write its checkpoint and learning curve.
    Train(TrainArgs),
    /// Train and evaluate every (reward, p, T) cell over several seeds.
    Sweep(SweepArgs),
    /// Print the mean baseline reward of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Run one guidance session and write its log.
    Session(SessionArgs),
    /// Compute occupancy, histograms and Bhattacharyya distance from logs.
    Report(ReportArgs),
    /// Fit the camera-to-display affine map from point pairs.
    Calibrate(CalibrateArgs),
    /// Serve a live session to one WebSocket fish source.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Left,
    Right,
}

impl From<Side> for TargetEnd {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => TargetEnd::Left,
            Side::Right => TargetEnd::Right,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Master seed [default: config seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total environment steps [default: config ppo.total_steps]
    #[arg(long)]
    pub steps: Option<u64>,
    /// End of the tank the policy is trained toward [default: config reward.target_end]
    #[arg(long, value_enum)]
    pub target: Option<Side>,
    /// Checkpoint output path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Learning-curve output path [default: <OUT>.curve.tsv]
    #[arg(long, value_name = "PATH")]
    pub curve: Option<PathBuf>,
}

/// One reward setting of a sweep grid: a composite beta or the baseline reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardCell {
    Beta(f64),
    Baseline,
}

impl FromStr for RewardCell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("baseline") {
            return Ok(RewardCell::Baseline);
        }
        match s.parse::<f64>() {
            Ok(b) if (0.0..=1.0).contains(&b) => Ok(RewardCell::Beta(b)),
            _ => Err(format!("`{s}` is neither a beta in [0, 1] nor `baseline`")),
        }
    }
}

impl fmt::Display for RewardCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardCell::Beta(b) => write!(f, "{b}"),
            RewardCell::Baseline => f.write_str("baseline"),
        }
    }
}

fn probability(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(format!("`{s}` is not a probability in [0, 1]")),
    }
}

fn positive_steps(s: &str) -> Result<u64, String> {
    match s.trim().parse::<u64>() {
        Ok(t) if t > 0 => Ok(t),
        _ => Err(format!("`{s}` is not a positive step count")),
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated betas; `baseline` selects the baseline reward.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1.., value_parser = RewardCell::from_str)]
    pub betas: Vec<RewardCell>,
    /// Comma-separated ignore probabilities.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1.., value_parser = probability)]
    pub ps: Vec<f64>,
    /// Comma-separated training lengths.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1.., value_parser = positive_steps)]
    pub steps_grid: Vec<u64>,
    /// Seeds per cell.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// First seed; trial i uses seed-base + i.
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// Evaluation length T' [default: config ppo.eval_len]
    #[arg(long)]
    pub eval_steps: Option<u64>,
    /// Results table output path (TSV).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Ignore probability [default: config sim.p_ignore]
    #[arg(long, value_parser = probability)]
    pub p: Option<f64>,
    /// Evaluation length T' [default: config ppo.eval_len]
    #[arg(long, value_parser = positive_steps)]
    pub eval_steps: Option<u64>,
    /// Seed of the evaluation streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Sim,
    Live,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Policy used while the target is the left end.
    #[arg(long, value_name = "PATH")]
    pub checkpoint_left: PathBuf,
    /// Policy used while the target is the right end.
    #[arg(long, value_name = "PATH")]
    pub checkpoint_right: PathBuf,
    /// Session length [default: config protocol.total_steps]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Steps per direction block [default: config protocol.switch_every]
    #[arg(long)]
    pub switch_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LiveArgs {
    /// Listen address for live sessions.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Listen port for live sessions.
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Step once per state frame instead of on the control timer.
    #[arg(long)]
    pub lockstep: bool,
    /// Freshest-snapshot age beyond which the step clock pauses.
    #[arg(long, default_value_t = 1000)]
    pub staleness_ms: u64,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Where fish positions come from.
    #[arg(long, value_enum, default_value_t = Source::Sim)]
    pub source: Source,
    /// Seed of the simulated school [default: config seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Session log output path (JSONL).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub live: LiveArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Session logs pooled into one condition.
    #[arg(required = true, value_name = "LOG")]
    pub logs: Vec<PathBuf>,
    /// Output directory for the metrics and plot-data files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Histogram bins over the tank width.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Condition name used in the table and file names.
    #[arg(long, default_value = "session")]
    pub condition: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Calibration point pairs (TOML).
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Write the fitted map here as TOML.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Session log output path (JSONL) [default: no log file]
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub live: LiveArgs,
}
