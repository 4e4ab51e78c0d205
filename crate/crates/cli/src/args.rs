use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use regnas::experiment::SearchSpace;

#[derive(Debug, Parser)]
#[command(name = "regnas", version, about = "Regression-proxy architecture evaluation and search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train sampled architectures to build (or resume) a groundtruth bench table.
    GenBench(GenBenchArgs),
    /// Import an external `id,metric` table.
    ImportBench(ImportBenchArgs),
    /// Score every bench architecture under a proxy task and report rank statistics.
    Rank(RankArgs),
    /// Evolve proxy tasks for the best ranking correlation on probe architectures.
    TaskSearch(TaskSearchArgs),
    /// Evolve architectures with the proxy score as fitness.
    NasSearch(NasSearchArgs),
    /// Dump realized target maps of a task.
    Signals(SignalsArgs),
    /// Score a single architecture.
    EvalArch(EvalArchArgs),
    /// Score recurrent cells with the sequence regression proxy.
    RnnRank(RnnRankArgs),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    /// Primary output path (a directory for `signals`).
    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::GenBench(a) => Some(&mut a.out),
            Command::ImportBench(a) => Some(&mut a.out),
            Command::Rank(a) => Some(&mut a.out),
            Command::TaskSearch(a) => Some(&mut a.out),
            Command::NasSearch(a) => Some(&mut a.out),
            Command::Signals(a) => Some(&mut a.dump),
            Command::EvalArch(a) => Some(&mut a.out),
            Command::RnnRank(a) => Some(&mut a.out),
            Command::Replay(_) => None,
        }
    }

    pub fn jobs_mut(&mut self) -> Option<&mut usize> {
        match self {
            Command::GenBench(a) => Some(&mut a.jobs),
            Command::Rank(a) => Some(&mut a.proxy.jobs),
            Command::TaskSearch(a) => Some(&mut a.jobs),
            Command::NasSearch(a) => Some(&mut a.proxy.jobs),
            Command::RnnRank(a) => Some(&mut a.jobs),
            _ => None,
        }
    }
}

/// Options shared by commands that score CNNs with a proxy task.
#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ProxyArgs {
    /// Preset name (single, combo, zero) or path to a task JSON file.
    #[arg(long, default_value = "combo")]
    pub task: String,
    /// Override the task's training iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Directory of PPM images used as the input batch instead of procedural images.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for evaluation.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GenBenchArgs {
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Override training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Override the dataset's pixel noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ImportBenchArgs {
    /// CSV with header `id,metric`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "external")]
    pub source: String,
    /// The metric is better when lower (e.g. a loss or perplexity).
    #[arg(long)]
    pub lower_better: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RankArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub proxy: ProxyArgs,
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Top fraction for the retrieving rate.
    #[arg(long, default_value_t = 0.1)]
    pub top: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TaskSearchArgs {
    #[arg(long)]
    pub bench: PathBuf,
    /// Probe architectures drawn from the bench.
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long = "P", default_value_t = 50)]
    pub population: usize,
    #[arg(long = "S", default_value_t = 10)]
    pub sample: usize,
    #[arg(long = "T", default_value_t = 400)]
    pub iterations: usize,
    /// Override the training iterations of every candidate task.
    #[arg(long)]
    pub proxy_iterations: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceArg {
    Bench,
    Full,
}

impl From<SpaceArg> for SearchSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Bench => SearchSpace::Bench,
            SpaceArg::Full => SearchSpace::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct NasSearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub proxy: ProxyArgs,
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long, value_enum, default_value = "bench")]
    pub space: SpaceArg,
    #[arg(long = "P", default_value_t = 50)]
    pub population: usize,
    #[arg(long = "S", default_value_t = 10)]
    pub sample: usize,
    #[arg(long = "T", default_value_t = 400)]
    pub generations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Csv,
    Pgm,
    Both,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SignalsArgs {
    /// Preset name or task JSON path.
    #[arg(long, default_value = "combo")]
    pub task: String,
    /// Output directory.
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MapFormat,
    /// Batch elements to realize.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Channels written per stage.
    #[arg(long, default_value_t = 4)]
    pub max_channels: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArchArgs {
    /// Six-digit cell id.
    #[arg(long)]
    pub arch: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub proxy: ProxyArgs,
    /// Bench table to look the groundtruth up in.
    #[arg(long)]
    pub bench: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RnnRankArgs {
    /// Cells sampled when no bench is given.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Bench table of recurrent cell ids; its cells are ranked against its metric.
    #[arg(long)]
    pub bench: Option<PathBuf>,
    /// Sequence proxy config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub top: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write the primary output here instead of the recorded path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}
