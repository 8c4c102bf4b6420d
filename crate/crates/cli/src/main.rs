//! Command-line front end: resilience tables/CDFs, guard-selection
//! experiments, and BGP monitor replay.

mod cmd_monitor;
mod cmd_resilience;
mod cmd_select;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes: 0 success, 1 usage/config error, 2 data error. Diagnostics go
/// to stderr; data goes to files under --out.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Parser)]
#[command(
    name = "torresil",
    version,
    about = "BGP attack resilience of Tor-hosting ASes: measurement, guard selection, and routing-anomaly monitoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-origin hijack/interception resilience and CDF exports
    Resilience(ResilienceArgs),
    /// Run the resilience-aware guard selection experiment
    Select(SelectArgs),
    /// Replay a BGP update stream through the anomaly detectors
    Monitor(MonitorArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackerChoice {
    All,
    Tier1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingChoice {
    Uniform,
    Bandwidth,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterceptRuleChoice {
    /// Evaluate the provider-route condition on the source's routes.
    Source,
    /// Experimental: evaluate it on each attacker's route to the origin.
    Attacker,
}

#[derive(Args)]
pub struct ResilienceArgs {
    /// AS-relationship file (asn1|asn2|rel lines)
    #[arg(long, value_name = "PATH")]
    pub(crate) topology: PathBuf,
    /// Relay consensus or JSON-lines file
    #[arg(long, value_name = "PATH")]
    pub(crate) relays: PathBuf,
    /// IP-to-ASN mapping (prefix<TAB>asn lines)
    #[arg(long, value_name = "PATH")]
    pub(crate) ip_map: PathBuf,
    /// Client AS set (asn[,weight] lines); adds client-weighted outputs
    #[arg(long, value_name = "PATH")]
    pub(crate) clients: Option<PathBuf>,
    /// Attacker universe for interception runs
    #[arg(long, value_enum, default_value = "all")]
    pub(crate) attackers: AttackerChoice,
    /// Tier-1 ASN list (one per line); defaults to the built-in snapshot
    #[arg(long, value_name = "PATH")]
    pub(crate) tier1_file: Option<PathBuf>,
    /// CDF weighting to export
    #[arg(long, value_enum, default_value = "both")]
    pub(crate) weighting: WeightingChoice,
    /// Interception safety-condition variant
    #[arg(long, value_enum, default_value = "source")]
    pub(crate) intercept_rule: InterceptRuleChoice,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub(crate) out: PathBuf,
}

#[derive(Args)]
pub struct SelectArgs {
    #[arg(long, value_name = "PATH")]
    pub(crate) topology: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub(crate) relays: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub(crate) ip_map: PathBuf,
    /// Client AS set: the sources of the selection experiment
    #[arg(long, value_name = "PATH")]
    pub(crate) clients: PathBuf,
    /// Resilience/bandwidth blend; 0 = bandwidth-only, 1 = resilience-only
    #[arg(long, default_value_t = 0.5)]
    pub(crate) alpha: f64,
    /// Random-sampling fraction for the inclusion-probability adjustment
    #[arg(long, default_value_t = 0.10)]
    pub(crate) g: f64,
    /// RNG seed for the sampled picks
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    /// Number of sampled guard picks per client
    #[arg(long, default_value_t = 10)]
    pub(crate) draws: usize,
    /// Sweep alpha over {0, 0.25, 0.5, 0.75, 1} instead of a single value
    #[arg(long)]
    pub(crate) sweep: bool,
    #[arg(long, value_name = "DIR")]
    pub(crate) out: PathBuf,
}

#[derive(Args)]
pub struct MonitorArgs {
    #[arg(long, value_name = "PATH")]
    pub(crate) relays: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub(crate) ip_map: PathBuf,
    /// BGP update stream (JSON lines)
    #[arg(long, value_name = "PATH")]
    pub(crate) stream: PathBuf,
    /// Attack injection spec: JSON array of
    /// {prefix, false_origin, start, duration_secs, n_updates[, as_path]}
    #[arg(long, value_name = "PATH")]
    pub(crate) inject: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0025)]
    pub(crate) freq_threshold: f64,
    #[arg(long, default_value_t = 0.065)]
    pub(crate) time_threshold: f64,
    /// Evaluation batch length in seconds (60 for per-minute batching)
    #[arg(long, default_value_t = 3600)]
    pub(crate) batch_secs: i64,
    /// Trailing baseline window in seconds
    #[arg(long, default_value_t = 30 * 86_400)]
    pub(crate) window_secs: i64,
    /// Quiet period after which a blacklisted prefix recovers
    #[arg(long, default_value_t = 86_400)]
    pub(crate) quarantine_secs: i64,
    /// Authorized (prefix,origin) pairs, one `prefix,asn` per line
    #[arg(long, value_name = "PATH")]
    pub(crate) benign: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub(crate) out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, everything else is a
            // usage error.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Resilience(args) => cmd_resilience::run(&args),
        Command::Select(args) => cmd_select::run(&args),
        Command::Monitor(args) => cmd_monitor::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
