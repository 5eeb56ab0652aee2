use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "covadj",
    version,
    about = "Covariate-adjusted treatment effect estimation for A/B tests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the ATE and lift with each model.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Re-randomize one arm into A/A splits and audit each model.
    Aa {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        aa: AaArgs,
    },
    /// Pad covariates with spurious noise folds and measure drift.
    Stress {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        stress: StressArgs,
    },
    /// Recommend how long the experiment should run.
    Power {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        power: PowerArgs,
    },
    /// Write a synthetic experiment as CSV.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        simulate: SimulateArgs,
    },
    /// Run one analysis over many experiments and day cut-offs, then aggregate.
    Batch {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        batch: BatchArgs,
        #[command(flatten)]
        aa: AaArgs,
        #[command(flatten)]
        power: PowerArgs,
        #[command(flatten)]
        simulate: SimulateArgs,
    },
    /// Summarize report files of one kind across experiments.
    Aggregate {
        /// Report JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra-day budgets for duration comparisons.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<u32>>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML settings file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column roles, e.g. `assignment=arm;outcome=y;covariates=x,w;pre_period=x;day=day`.
    /// Inferred from the header when omitted.
    #[arg(long)]
    pub schema: Option<String>,
    /// Comma-separated model list, e.g. `dim,ols,lr1,ridge,lasso,two_step:ridge`.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Significance level; intervals have coverage 1 - alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output directory (default: $COVADJ_OUT_DIR, then ./covadj-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep only units triggered on or before this day.
    #[arg(long)]
    pub day: Option<u32>,
    /// Cross-validation folds for penalized models.
    #[arg(long)]
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AaArgs {
    #[arg(long)]
    pub s_splits: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Arm to re-randomize.
    #[arg(long)]
    pub arm: Option<u8>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StressArgs {
    /// Spurious fold counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub reference_model: Option<String>,
    /// Also time the models on synthetic data of these sizes (not reproducible).
    #[arg(long, value_delimiter = ',')]
    pub timing_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PowerArgs {
    /// Hypothesized relative lift.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub power_target: Option<f64>,
    /// Last day to consider (default: 10 × day).
    #[arg(long)]
    pub horizon: Option<u32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n_units: Option<usize>,
    #[arg(long)]
    pub assignment_prob: Option<f64>,
    #[arg(long)]
    pub k_covariates: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub outcome_cor: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub true_ate: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub daily_arrivals: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub extra_cor: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BatchArgs {
    /// Experiment CSVs sharing one schema.
    #[arg(long, value_delimiter = ',')]
    pub inputs: Option<Vec<PathBuf>>,
    /// Number of synthetic experiments when no inputs are given.
    #[arg(long)]
    pub experiments: Option<usize>,
    /// Analysis days, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub days: Option<Vec<u32>>,
    /// Analysis to run per experiment: estimate, aa or power.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<u32>>,
}
