//! `satpm`: batch front end for the exposure-modelling pipeline.
//!
//! Progress goes to stderr, machine-readable results to stdout or files.
//! Exit status is 0 on success, 1 on invalid input or configuration and 2
//! on filesystem or network failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "satpm", version, about = "PM2.5 exposure from satellite tiles")]
pub struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a site CSV into labelled sites.
    Ingest(IngestArgs),
    /// Regular lattice of prediction locations over an extent.
    Grid(GridArgs),
    /// Download (or synthesise) the tile for every labelled site.
    Fetch(FetchArgs),
    /// Synthetic sites, tiles and a split manifest in one step.
    Synth(SynthArgs),
    /// Geohash-disjoint train/validation/test manifest.
    Split(SplitArgs),
    /// Fit a model and record it on the leaderboard.
    Train(TrainArgs),
    /// Metrics on one split of the manifest.
    Eval(EvalArgs),
    /// Heatmap of the evidence behind one prediction.
    Gradcam(GradcamArgs),
    /// Per-site differences between two regression checkpoints.
    Compare(CompareArgs),
    /// Leaderboard summary table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    PerYear,
    AveragedPerLocation,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Labelled sites JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Keep rows whose PM2.5 was estimated from PM10.
    #[arg(long)]
    pub keep_pm10_derived: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub lat_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lat_max: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lon_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lon_max: f64,
    /// Lattice spacing in degrees.
    #[arg(long)]
    pub resolution: f64,
    #[arg(long)]
    pub zoom: Option<u32>,
    /// CSV of `lat,lon` rows.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub zoom: Option<u32>,
    /// Generate tiles locally instead of calling the tile service.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub zoom: Option<u32>,
    #[arg(long)]
    pub size: Option<u32>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Output manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `train,validation,test`, e.g. `0.8,0.1,0.1`.
    #[arg(long, value_parser = parse_ratios)]
    pub ratios: Option<(f64, f64, f64)>,
    #[arg(long)]
    pub zoom: Option<u32>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaseArg {
    Sepconv,
    Plain,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum HeadArg {
    Regression,
    Decile10,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub leaderboard: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub base: Option<BaseArg>,
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Weight initialisation seed.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// `nadam` or `rmsprop`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Shuffle and dropout seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report JSON; defaults to `<reports>/eval_<split>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// PNG tile to explain.
    #[arg(long)]
    pub image: PathBuf,
    /// 1-based decile class; the predicted class when omitted.
    #[arg(long)]
    pub class: Option<u8>,
    /// Heatmap JSON; a grayscale PNG is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Geojson,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub checkpoint_a: PathBuf,
    #[arg(long)]
    pub checkpoint_b: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Directory for the report and the differences export.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub leaderboard: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_ratios(raw: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated ratios".into()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(path) = &cli.config {
        if !path.exists() {
            return Err(CliError::Config(format!("{} does not exist", path.display())));
        }
    }
    let config = PipelineConfig::load(cli.config.as_deref())?;
    commands::dispatch(cli.command, config)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_parse() {
        assert_eq!(parse_ratios("0.8,0.1,0.1").unwrap(), (0.8, 0.1, 0.1));
        assert!(parse_ratios("0.8,0.2").is_err());
        assert!(parse_ratios("a,b,c").is_err());
    }

    #[test]
    fn no_api_key_flag() {
        assert!(Cli::try_parse_from(["satpm", "fetch", "--api-key", "K"]).is_err());
    }

    #[test]
    fn split_flags() {
        let cli = Cli::try_parse_from(["satpm", "split", "--manifest", "m.jsonl", "--seed", "7", "--ratios", "0.8,0.1,0.1"])
            .unwrap();
        assert!(matches!(cli.command, Command::Split(SplitArgs { seed: Some(7), .. })));
    }
}
