//! Covariate-adjusted average treatment effect estimation for randomized
//! two-arm experiments.

pub mod aa;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod power;
pub mod regression;
pub mod rng;
pub mod stats;
pub mod stress;

pub use dataset::{ArmSubset, ColumnSchema, ExperimentData, SyntheticConfig};
pub use error::{Error, Result};
pub use estimator::{
    estimate, estimate_sample, estimate_two_step, fit_arms, impute, variance_reduction,
    ArmModels, AteEstimate, Sample,
};
pub use regression::{fit, ArmData, FittedArmModel, ModelKind, ModelSpec};
pub use aa::{bucket_metrics, run_aa, AaRun, BucketMetrics};
pub use power::{forecast_arm_sizes, recommend_duration, DurationRecommendation, Forecast};
pub use stress::{augment, error_distribution, timing_profile, StressConfig, StressReport};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
