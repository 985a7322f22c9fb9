use std::path::PathBuf;

use areltrend::model::ModelFamily;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "areltrend", version, about = "Bayesian trend models for areal count panels")]
pub struct Cli {
    /// Worker threads for chains and folds. Defaults to the available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive the standardized covariate table from raw demographics.
    BuildCovariates(BuildCovariatesArgs),
    /// Queen contiguity edges from unit polygons.
    Contiguity(ContiguityArgs),
    /// Write a synthetic data set with known parameters.
    Simulate(SimulateArgs),
    /// Fit one model family.
    Fit(FitArgs),
    /// Compare predictive error across model families.
    Evaluate(EvaluateArgs),
    /// Unit intervals, barrier report and map output from a fit.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct BuildCovariatesArgs {
    #[arg(long)]
    pub crimes: PathBuf,
    /// Raw demographic table.
    #[arg(long)]
    pub raw: PathBuf,
    /// Two-column `raw_column,category` table collapsing ethnicity columns.
    #[arg(long)]
    pub ethnicity_map: Option<PathBuf>,
    /// One unit id per line.
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    /// Keep units with missing covariate inputs.
    #[arg(long)]
    pub keep_missing: bool,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ContiguityArgs {
    /// GeoJSON FeatureCollection with a `unit_id` property per feature.
    #[arg(long)]
    pub polygons: PathBuf,
    /// Vertices closer than this are treated as shared.
    #[arg(long, default_value_t = 1e-9)]
    pub snap_tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeKind {
    Grid,
    Cycle,
    Path,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation parameters; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub shape: Option<ShapeKind>,
    /// Grid rows, or the unit count for cycles and paths.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub first_period: Option<i64>,
    /// Number of standard-normal covariates, each with coefficient 0.1.
    #[arg(long)]
    pub covariates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Data sources shared by `fit` and `evaluate`.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub crimes: PathBuf,
    /// Precomputed `unit_id,<name>...` covariate table.
    #[arg(long, conflicts_with = "raw_covariates")]
    pub covariates: Option<PathBuf>,
    /// Raw demographic table, transformed and standardized on the fly.
    #[arg(long)]
    pub raw_covariates: Option<PathBuf>,
    #[arg(long, requires = "raw_covariates")]
    pub ethnicity_map: Option<PathBuf>,
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    #[arg(long, conflicts_with = "polygons")]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub snap_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Eb,
    Noninf,
}

/// Run settings shared by `fit` and `evaluate`. Unset flags keep the value
/// from `--config`, or the built-in default.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON model configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `final`, `none`, or comma-separated period labels.
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    #[arg(long)]
    pub two_stage: bool,
    #[arg(long)]
    pub alpha_threshold: Option<f64>,
    #[arg(long)]
    pub beta_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_parser = parse_family)]
    pub model: Option<ModelFamily>,
    /// Also write every retained draw to draws.csv.
    #[arg(long)]
    pub save_draws: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated families. Defaults to all of them.
    #[arg(long, value_parser = parse_family, value_delimiter = ',')]
    pub model: Vec<ModelFamily>,
    /// Add leave-one-period-out cross-validation.
    #[arg(long)]
    pub cv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Output directory of a completed `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Defaults to `<fit>/summary`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Require a barrier report; fails on fits with fixed borders.
    #[arg(long)]
    pub barriers: bool,
    /// Unit polygons for results.geojson. Defaults to the polygons the fit used.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub snap_tolerance: f64,
    #[arg(long)]
    pub alpha_threshold: Option<f64>,
    #[arg(long)]
    pub beta_threshold: Option<f64>,
    /// Units listed at each end of the ranking.
    #[arg(long, default_value_t = 50)]
    pub top: usize,
}

fn parse_family(s: &str) -> Result<ModelFamily, String> {
    s.parse().map_err(|e: areltrend::Error| e.to_string())
}
