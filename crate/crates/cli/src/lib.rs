//! `pgt` command-line front end over [`pgt_core`].
//!
//! Exit codes: 0 on success, 2 on any input error, 3 when `evaluate --strict`
//! finds a model above the band.

pub mod commands;
pub mod json;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pgt_core::reliability::InterMode;
use pgt_core::{BootstrapSpec, Label, MetricConfig, MetricId};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ABOVE_BAND: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pgt",
    version,
    about = "Annotation reliability bands for segmentation evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare two LGRID files.
    Metrics(MetricsArgs),
    /// Inter- and/or intra-rater reliability of a manifest.
    Reliability(ReliabilityArgs),
    /// The band [inter-rater, intra-rater] of a manifest.
    Band(BandArgs),
    /// Fuse each item's annotations into one grid.
    Consensus(ConsensusArgs),
    /// Score model outputs against a reference and the band.
    Evaluate(EvaluateArgs),
    /// Run a synthetic experiment from a TOML config.
    Simulate(SimulateArgs),
}

fn parse_metric(s: &str) -> Result<MetricId, String> {
    s.parse().map_err(|e: pgt_core::metrics::UnknownMetric| {
        let names: Vec<&str> = MetricId::ALL.iter().map(|m| m.name()).collect();
        format!("{e}; expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Repeatable.
    #[arg(long = "metric", value_parser = parse_metric, default_value = "dice")]
    pub metrics: Vec<MetricId>,
    /// Foreground label for binary metrics (default: any nonzero label).
    #[arg(long)]
    pub label: Option<Label>,
    #[arg(long, default_value_t = pgt_core::metrics::DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterModeArg {
    /// Repeat 0 of each rater.
    Repeat0,
    /// Average over every repeat combination.
    MeanOverRepeats,
}

impl From<InterModeArg> for InterMode {
    fn from(m: InterModeArg) -> Self {
        match m {
            InterModeArg::Repeat0 => InterMode::RepeatZero,
            InterModeArg::MeanOverRepeats => InterMode::MeanOverRepeats,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long, value_parser = parse_metric, default_value = "dice")]
    pub metric: MetricId,
    #[arg(long)]
    pub label: Option<Label>,
    #[arg(long, default_value_t = pgt_core::metrics::DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InterModeArg::Repeat0)]
    pub inter_mode: InterModeArg,
}

impl EstimateArgs {
    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            metric: self.metric,
            label: self.label,
            iou_threshold: self.iou_threshold,
        }
    }

    pub fn bootstrap(&self) -> BootstrapSpec {
        BootstrapSpec {
            n_resamples: self.resamples,
            level: self.level,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Inter,
    Intra,
    Both,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Both)]
    pub kind: KindArg,
    #[command(flatten)]
    pub estimate: EstimateArgs,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub estimate: EstimateArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionMethod {
    Majority,
    Staple,
}

#[derive(Debug, Clone, Args)]
pub struct StapleArgs {
    /// Foreground prevalence (default: mean foreground fraction).
    #[arg(long)]
    pub prior: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.9)]
    pub init_p: f64,
    #[arg(long, default_value_t = 0.9)]
    pub init_q: f64,
}

impl StapleArgs {
    pub fn params(&self) -> pgt_core::consensus::StapleParams {
        pgt_core::consensus::StapleParams {
            prior: self.prior,
            tol: self.tol,
            max_iter: self.max_iter,
            init_p: self.init_p,
            init_q: self.init_q,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = FusionMethod::Majority)]
    pub method: FusionMethod,
    /// Which repeat of each rater to fuse.
    #[arg(long, default_value_t = 0)]
    pub repeat: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub staple: StapleArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Reference rater (default: first rater id in sort order).
    #[arg(long, conflicts_with = "consensus")]
    pub reference_rater: Option<String>,
    /// Use a fused reference instead of a single rater.
    #[arg(long, value_enum)]
    pub consensus: Option<FusionMethod>,
    #[command(flatten)]
    pub staple: StapleArgs,
    /// Exit with status 3 if any model lands above the band.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the phantom, rater and reference grids plus a manifest.
    #[arg(long)]
    pub keep_grids: bool,
}

/// Runs one command, writing the report to `out` and diagnostics to `err`.
/// Returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let result = match cli.command {
        Command::Metrics(a) => commands::metrics(&a, err),
        Command::Reliability(a) => commands::reliability(&a),
        Command::Band(a) => commands::band(&a, err),
        Command::Consensus(a) => commands::consensus(&a),
        Command::Evaluate(a) => commands::evaluate(&a, err),
        Command::Simulate(a) => commands::simulate(&a),
    };
    match result {
        Ok(report) => {
            if let Err(e) = out.write_all(report.stdout.as_bytes()) {
                let _ = writeln!(err, "error: {e}");
                return EXIT_INPUT;
            }
            report.exit
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_INPUT
        }
    }
}
