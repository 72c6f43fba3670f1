//! Command-line arguments and their JSON config-file counterpart.
//!
//! Every option is optional on the command line; a value given by flag wins
//! over the same key in `--config`, which wins over the built-in default.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "mwlse", version, about = "Weighted least squares estimation for multivariate count and binary time series")]
pub struct Cli {
    /// JSON file with option values for the chosen subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (created if absent).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Worker threads for Monte Carlo replications (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel from the copula data-generating process.
    Simulate(SimulateArgs),
    /// Fit a model to a panel CSV.
    Fit(FitArgs),
    /// Relative efficiency of the two-stage estimator against the QMLE.
    Montecarlo(MonteCarloArgs),
    /// Sign model for a panel of stock prices.
    Stocks(StocksArgs),
    /// Pearson residual diagnostics for an existing fit.
    Residuals(ResidualsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Count,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    Lse,
    Qmle,
    MwlseEqcMax,
    MwlseEqcMean,
    /// Identity correlation with the family variance.
    MwlseDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Full,
    Diagonal,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualModeArg {
    Conventional,
    Literal,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Cross-sectional dimension (ignored when --theta is given).
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    /// Copula correlation in [0, 1).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub max_events: Option<usize>,
    /// JSON file with `{"c": [...], "a": [[...]], "b": [[...]]}`.
    #[arg(long)]
    pub theta: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Panel CSV (header row of series names).
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long, value_enum)]
    pub plan: Option<PlanKind>,
    #[arg(long, value_enum)]
    pub a_shape: Option<ShapeKind>,
    #[arg(long, value_enum)]
    pub b_shape: Option<ShapeKind>,
    /// Weighted stages after the first step (1 = two-stage).
    #[arg(long)]
    pub reweight_steps: Option<usize>,
    /// Recorded in the output metadata; fitting itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloArgs {
    /// Comma-separated copula correlations (default 0.3,0.4,…,0.9).
    #[arg(long, value_delimiter = ',')]
    pub rhos: Option<Vec<f64>>,
    /// Comma-separated dimensions; paired with --ts.
    #[arg(long, value_delimiter = ',')]
    pub ds: Option<Vec<usize>>,
    /// Comma-separated sample sizes; paired with --ds.
    #[arg(long, value_delimiter = ',')]
    pub ts: Option<Vec<usize>>,
    /// Replications per grid point.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub plan: Option<PlanKind>,
    #[arg(long)]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StocksArgs {
    /// Price CSV: `date,<ticker>,…` with ISO dates.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub residual_mode: Option<ResidualModeArg>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualsArgs {
    /// `fit.json` written by the `fit` command.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Panel the fit was computed on.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub residual_mode: Option<ResidualModeArg>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Fills every `None` field of `cli` from `file`.
pub trait Merge: Sized + for<'de> Deserialize<'de> {
    fn merge(self, file: Self) -> Self;

    fn with_config(self, path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else { return Ok(self) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(self.merge(file))
    }
}

macro_rules! impl_merge {
    ($ty:ty { $($field:ident),* }) => {
        impl Merge for $ty {
            fn merge(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field)),* }
            }
        }
    };
}

impl_merge!(SimulateArgs { model, d, t, rho, seed, burn_in, max_events, theta });
impl_merge!(FitArgs { panel, model, plan, a_shape, b_shape, reweight_steps, seed });
impl_merge!(MonteCarloArgs { rhos, ds, ts, s, seed, plan, burn_in });
impl_merge!(StocksArgs { prices, residual_mode, max_lag, seed });
impl_merge!(ResidualsArgs { fit, panel, residual_mode, max_lag, seed });

pub fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v),
        None => bail!("missing required option --{flag}"),
    }
}
