//! `flowlens` command line: generate traces, extract them into region files
//! and run the classification, autoscaling and load-balancing applications.
//!
//! Exit status is 0 on success, 2 for usage or configuration errors and 1
//! for anything that fails at run time. `FLOWLENS_LOG` sets log verbosity
//! (`error` .. `trace`, env_logger syntax).

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use flowlens::apps::AppError;
use flowlens::ml::MlError;
use flowlens::store::StoreError;
use flowlens::traffic::TrafficError;

#[derive(Debug, Parser)]
#[command(name = "flowlens", version, about = "Passive flow features and the applications built on them")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Cmd {
    /// Generate a packet trace from a workload.
    Gen(GenArgs),
    /// Build the four-class labelled feature corpus.
    Corpus(CorpusArgs),
    /// Run a trace through the flow table into a region file and window it
    /// into feature rows.
    Extract(ExtractArgs),
    /// Cluster feature rows.
    Classify(ClassifyArgs),
    /// Run the threshold autoscaler on a load scenario.
    Autoscale(AutoscaleArgs),
    /// Replay one workload against several balancing policies.
    Lbsim(LbsimArgs),
    /// Print a decoded view of a region file.
    ShmDump(ShmDumpArgs),
    /// Rerun the command recorded in a manifest.
    Rerun(RerunArgs),
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::Gen(_) => "gen",
            Cmd::Corpus(_) => "corpus",
            Cmd::Extract(_) => "extract",
            Cmd::Classify(_) => "classify",
            Cmd::Autoscale(_) => "autoscale",
            Cmd::Lbsim(_) => "lbsim",
            Cmd::ShmDump(_) => "shm-dump",
            Cmd::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileArg {
    Exponential,
    FixedFiles,
    Mixture,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    /// Flow arrivals per second.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Seconds of arrivals.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 4)]
    pub servers: usize,
    /// Comma-separated capacities, one per server (default all 1).
    #[arg(long, value_delimiter = ',')]
    pub capacities: Vec<f64>,
    /// Comma-separated core counts, one per server (default all 1).
    #[arg(long, value_delimiter = ',')]
    pub cores: Vec<u32>,
    /// SYN-only flood flows per second.
    #[arg(long)]
    pub flood_rate: Option<f64>,
    /// Mean work per flow in seconds at capacity 1.
    #[arg(long, default_value_t = 0.05)]
    pub mean_work: f64,
    #[arg(long, value_enum, default_value_t = ProfileArg::Exponential)]
    pub profile: ProfileArg,
    /// Workload JSON; replaces every flag above.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes features.csv, truth.csv and manifest.json here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Region file to create (overwritten).
    #[arg(long)]
    pub region: PathBuf,
    /// Tick and window length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    /// Comma-separated signal names to keep (default all).
    #[arg(long, value_delimiter = ',')]
    pub signals: Vec<String>,
    /// Egress blocks in the region.
    #[arg(long, default_value_t = 64)]
    pub n_egress: usize,
    /// Seed of the reservoir slot choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature CSV (default `<region>.features.csv`).
    #[arg(long)]
    pub features_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// kmeans4, gmm4 or dbscan.
    #[arg(long, default_value = "kmeans4")]
    pub method: String,
    /// DBSCAN neighbourhood radius in the standardized embedding.
    #[arg(long, default_value_t = flowlens::apps::classify::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = flowlens::apps::classify::DEFAULT_MIN_PTS)]
    pub min_pts: usize,
    /// Principal components kept.
    #[arg(long, default_value_t = flowlens::apps::classify::DEFAULT_COMPONENTS)]
    pub components: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth label CSV (a `truth` or `label` column); enables ARI.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Labels CSV to write; the summary goes to `<out>.summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorArg {
    Oracle,
    Reactive,
    Linreg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AutoscaleArgs {
    #[arg(long, value_enum, default_value_t = PredictorArg::Oracle)]
    pub predictor: PredictorArg,
    /// Scenario JSON (default: the step-load scenario for `--seed`).
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Controller config JSON (default thresholds otherwise).
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature window of the regression predictor, in control steps.
    #[arg(long, default_value_t = 4)]
    pub lookback: usize,
    /// Writes timeline.csv, summary.json and manifest.json here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LbsimArgs {
    /// Comma-separated: ecmp, wcmp, awcmp, rlb.
    #[arg(long, value_delimiter = ',', default_value = "ecmp,wcmp,awcmp,rlb")]
    pub policies: Vec<String>,
    /// Workload JSON (default: the heterogeneous four-server bench).
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes fct_<policy>.csv, summary.json and manifest.json here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ShmDumpArgs {
    #[arg(long)]
    pub region: PathBuf,
    /// Instead of dumping, run this many publishes against a concurrent
    /// reader on one egress and report torn frames.
    #[arg(long)]
    pub stress_io: Option<u64>,
    /// Egress used by `--stress-io` (default the highest inactive one).
    #[arg(long)]
    pub egress: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the outputs here, under their original file names.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Bad flags or configuration; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl UsageError {
    pub fn from_json(e: serde_json::Error) -> Self {
        UsageError(format!("bad JSON: {e}"))
    }
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn is_config_error(e: &(dyn std::error::Error + 'static)) -> bool {
    if e.is::<UsageError>() {
        return true;
    }
    if let Some(e) = e.downcast_ref::<AppError>() {
        return match e {
            AppError::Config(_) => true,
            AppError::Ml(m) => matches!(m, MlError::InvalidArg(_)),
            AppError::Traffic(t) => matches!(t, TrafficError::Config(_)),
            AppError::Store(s) => matches!(s, StoreError::Config(_)),
            _ => false,
        };
    }
    matches!(e.downcast_ref::<TrafficError>(), Some(TrafficError::Config(_)))
        || matches!(e.downcast_ref::<StoreError>(), Some(StoreError::Config(_)))
        || matches!(e.downcast_ref::<MlError>(), Some(MlError::InvalidArg(_)))
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(is_config_error) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWLENS_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
