//! Report documents written by each command.

use covadj::aa::{bucket_metrics, run_aa, BucketMetrics};
use covadj::power::{forecast_arm_sizes, recommend_duration, DurationRecommendation};
use covadj::stress::{error_distribution, StressConfig, StressSummary};
use covadj::{estimate, stats, variance_reduction, AteEstimate, ExperimentData, ModelSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Failure {
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportedEstimate {
    #[serde(flatten)]
    pub estimate: AteEstimate,
    /// Percent variance reduction against DIM on the same data.
    pub variance_reduction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: String,
    pub format_version: u32,
    pub source: String,
    pub day: Option<u32>,
    pub n_units: usize,
    pub k: usize,
    pub n_per_arm: (usize, usize),
    pub alpha: f64,
    pub seed: u64,
    pub estimates: Vec<ReportedEstimate>,
    pub failures: Vec<Failure>,
}

/// Fits each model; failures are recorded and the rest still run.
fn estimate_all(
    data: &ExperimentData,
    models: &[ModelSpec],
    alpha: f64,
    seed: u64,
) -> (Vec<ReportedEstimate>, Vec<Failure>) {
    let dim = estimate(data, &ModelSpec::dim(), alpha, seed).ok();
    let results: Vec<_> = models
        .par_iter()
        .map(|m| (m.to_string(), estimate(data, m, alpha, seed)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(e) => {
                let vr = dim.as_ref().and_then(|d| variance_reduction(&e, d));
                ok.push(ReportedEstimate {
                    estimate: e,
                    variance_reduction: vr,
                });
            }
            Err(err) => failed.push(Failure {
                model_id: id,
                error: err.to_string(),
            }),
        }
    }
    (ok, failed)
}

pub fn estimate_report(
    data: &ExperimentData,
    source: &str,
    day: Option<u32>,
    models: &[ModelSpec],
    alpha: f64,
    seed: u64,
) -> EstimateReport {
    let (estimates, failures) = estimate_all(data, models, alpha, seed);
    EstimateReport {
        kind: "estimate".into(),
        format_version: FORMAT_VERSION,
        source: source.into(),
        day,
        n_units: data.len(),
        k: data.k(),
        n_per_arm: data.arm_sizes(),
        alpha,
        seed,
        estimates,
        failures,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AaModelSummary {
    pub model_id: String,
    pub failures: usize,
    pub failure_example: Option<String>,
    pub mean_ate: Option<f64>,
    /// Monte Carlo standard error of `mean_ate`.
    pub mc_se: Option<f64>,
    pub pooled_coverage: Option<f64>,
    pub conditional_bias_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AaReport {
    pub kind: String,
    pub format_version: u32,
    pub source: String,
    pub day: Option<u32>,
    pub arm: u8,
    pub n_units: usize,
    pub s_splits: usize,
    pub kappa: usize,
    pub alpha: f64,
    pub seed: u64,
    pub true_ate: f64,
    pub zeta_mean: f64,
    pub zeta_mc_se: f64,
    pub models: Vec<AaModelSummary>,
    pub bucket_metrics: BucketMetrics,
}

fn mc_summary(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        n => (
            Some(stats::mean(values)),
            Some((stats::variance(values, 1) / n as f64).sqrt()),
        ),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn aa_report(
    data: &ExperimentData,
    source: &str,
    day: Option<u32>,
    arm: u8,
    models: &[ModelSpec],
    s_splits: usize,
    kappa: usize,
    alpha: f64,
    seed: u64,
) -> covadj::Result<(AaReport, covadj::AaRun)> {
    let run = run_aa(data, arm, models, s_splits, alpha, seed)?;
    let buckets = bucket_metrics(&run, kappa)?;
    let zetas = run.zetas();
    let (zeta_mean, zeta_se) = mc_summary(&zetas);
    let summaries = run
        .models
        .iter()
        .enumerate()
        .map(|(m, id)| {
            let (z, ates) = run.pairs(m);
            let (mean_ate, mc_se) = mc_summary(&ates);
            AaModelSummary {
                model_id: id.clone(),
                failures: run.failures[m],
                failure_example: run.failure_examples[m].clone(),
                mean_ate,
                mc_se,
                pooled_coverage: run.pooled_coverage(m),
                conditional_bias_slope: (z.len() >= 2)
                    .then(|| stats::ls_slope(&z, &ates))
                    .filter(|s| s.is_finite()),
            }
        })
        .collect();
    let report = AaReport {
        kind: "aa".into(),
        format_version: FORMAT_VERSION,
        source: source.into(),
        day,
        arm,
        n_units: run.n_units,
        s_splits,
        kappa,
        alpha,
        seed,
        true_ate: run.true_ate,
        zeta_mean: zeta_mean.unwrap_or(0.0),
        zeta_mc_se: zeta_se.unwrap_or(0.0),
        models: summaries,
        bucket_metrics: buckets,
    };
    Ok((report, run))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StressReportDoc {
    pub kind: String,
    pub format_version: u32,
    pub source: String,
    pub day: Option<u32>,
    pub n_units: usize,
    pub k: usize,
    pub folds: Vec<usize>,
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub reference_model: String,
    pub reference_ate: f64,
    pub relative_errors: bool,
    pub constant_columns: Vec<usize>,
    pub summaries: Vec<StressSummary>,
}

pub fn stress_report(
    data: &ExperimentData,
    source: &str,
    day: Option<u32>,
    config: &StressConfig,
) -> covadj::Result<(StressReportDoc, covadj::StressReport)> {
    let rep = error_distribution(data, config)?;
    let doc = StressReportDoc {
        kind: "stress".into(),
        format_version: FORMAT_VERSION,
        source: source.into(),
        day,
        n_units: rep.n_units,
        k: rep.k,
        folds: config.folds.clone(),
        draws: config.mc_draws,
        alpha: config.alpha,
        seed: config.seed,
        reference_model: rep.reference_model.clone(),
        reference_ate: rep.reference_ate,
        relative_errors: rep.relative_errors,
        constant_columns: rep.constant_columns.clone(),
        summaries: rep.summaries.clone(),
    };
    Ok((doc, rep))
}

pub fn write_stress_draws(rep: &covadj::StressReport, out: &mut Vec<u8>) -> covadj::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["model", "L", "draw", "ate", "err", "vr", "failure"])?;
    for r in &rep.records {
        w.write_record([
            r.model_id.clone(),
            r.folds.to_string(),
            r.draw.to_string(),
            fmt_opt(r.ate),
            fmt_opt(r.err),
            fmt_opt(r.vr),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportedDuration {
    #[serde(flatten)]
    pub recommendation: DurationRecommendation,
    pub variance_reduction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerReport {
    pub kind: String,
    pub format_version: u32,
    pub source: String,
    #[serde(rename = "D")]
    pub day: u32,
    pub horizon: u32,
    pub n_units: usize,
    pub anchor_sizes: (usize, usize),
    pub delta: f64,
    pub alpha: f64,
    pub power_target: f64,
    pub seed: u64,
    pub recommendations: Vec<ReportedDuration>,
    pub failures: Vec<Failure>,
}

/// DIM is always evaluated first so model durations can be compared to it.
#[allow(clippy::too_many_arguments)]
pub fn power_report(
    data: &ExperimentData,
    source: &str,
    day: u32,
    horizon: Option<u32>,
    models: &[ModelSpec],
    delta: f64,
    alpha: f64,
    power_target: f64,
    seed: u64,
) -> covadj::Result<PowerReport> {
    let forecast = forecast_arm_sizes(data, day, horizon)?;
    let truncated = data.truncate_to_day(day)?;
    let mut specs = vec![ModelSpec::dim()];
    for m in models {
        if !specs.iter().any(|s| s.to_string() == m.to_string()) {
            specs.push(m.clone());
        }
    }
    let (estimates, mut failures) = estimate_all(&truncated, &specs, alpha, seed);
    let mut recommendations = Vec::new();
    for e in estimates {
        match recommend_duration(&e.estimate, &forecast, delta, alpha, power_target) {
            Ok(r) => recommendations.push(ReportedDuration {
                recommendation: r,
                variance_reduction: e.variance_reduction,
            }),
            Err(err) => failures.push(Failure {
                model_id: e.estimate.model_id.clone(),
                error: err.to_string(),
            }),
        }
    }
    Ok(PowerReport {
        kind: "power".into(),
        format_version: FORMAT_VERSION,
        source: source.into(),
        day,
        horizon: forecast.horizon,
        n_units: truncated.len(),
        anchor_sizes: forecast.anchor_sizes,
        delta,
        alpha,
        power_target,
        seed,
        recommendations,
        failures,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateReport {
    pub kind: String,
    pub format_version: u32,
    pub config: covadj::SyntheticConfig,
    pub file: String,
    pub schema: String,
    pub n_units: usize,
    pub n_per_arm: (usize, usize),
    pub last_day: Option<u32>,
}

pub fn csv_writer(out: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(out)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Tidy per-bucket rows for plotting.
pub fn write_bucket_csv(m: &BucketMetrics, out: &mut Vec<u8>) -> covadj::Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "bucket",
        "zeta_lo",
        "zeta_hi",
        "model",
        "n_valid",
        "mse",
        "median_dist",
        "excess_frac",
        "coverage",
        "r_mse",
        "r_median_dist",
        "r_excess_frac",
    ])?;
    for b in &m.buckets {
        for mb in &b.models {
            w.write_record([
                b.index.to_string(),
                format!("{:?}", b.zeta_range.0),
                format!("{:?}", b.zeta_range.1),
                mb.model_id.clone(),
                mb.n_valid.to_string(),
                fmt_opt(mb.mse),
                fmt_opt(mb.median_dist),
                fmt_opt(mb.excess_frac),
                fmt_opt(mb.coverage),
                fmt_opt(mb.r_mse),
                fmt_opt(mb.r_median_dist),
                fmt_opt(mb.r_excess_frac),
            ])?;
        }
    }
    Ok(())
}
