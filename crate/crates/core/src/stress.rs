//! Spurious-covariate stress testing.
//!
//! The covariate block is padded with `L` folds of Gaussian noise columns
//! that match each real column's mean and standard deviation, then every
//! model is refit and compared against a reference estimate on the original
//! data.

use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate, ExperimentData, SyntheticConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate, variance_reduction, AteEstimate};
use crate::regression::ModelSpec;
use crate::rng::{derive_named, derive_seed, rng_from_seed};
use crate::stats;

/// Appends `folds` blocks of spurious columns after the real ones.
///
/// Column `k` of every fold is drawn i.i.d. from `N(μ̂ₖ, σ̂ₖ²)`, where `σ̂ₖ`
/// is the `N-1` sample standard deviation of real column `k`. Names are
/// `<name>~<fold>`.
pub fn augment(data: &ExperimentData, folds: usize, seed: u64) -> Result<ExperimentData> {
    if folds == 0 {
        return Err(Error::InvalidArgument("folds must be at least 1".into()));
    }
    let n = data.len();
    let k = data.k();
    let moments: Vec<(f64, f64)> = (0..k)
        .map(|c| {
            let col = data.column(c);
            (stats::mean(&col), stats::variance(&col, 1).sqrt())
        })
        .collect();
    let width = k * (folds + 1);
    let mut cov = vec![0.0; n * width];
    for i in 0..n {
        cov[i * width..i * width + k].copy_from_slice(data.row(i));
    }
    let mut rng = rng_from_seed(derive_named(seed, "spurious", folds as u64));
    for l in 1..=folds {
        for (c, &(mu, sd)) in moments.iter().enumerate() {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                cov[i * width + l * k + c] = mu + sd * e;
            }
        }
    }
    let mut names = data.covariate_names().to_vec();
    for l in 1..=folds {
        names.extend(data.covariate_names().iter().map(|s| format!("{s}~{l}")));
    }
    data.with_covariates(cov, names, data.pre_period_col())
}

/// Real columns with zero sample variance; their spurious copies are
/// constant too.
pub fn constant_columns(data: &ExperimentData) -> Vec<usize> {
    (0..data.k())
        .filter(|&c| stats::variance(&data.column(c), 1) == 0.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    /// Fold counts `L` to evaluate.
    pub folds: Vec<usize>,
    pub mc_draws: usize,
    pub models: Vec<ModelSpec>,
    pub seed: u64,
    pub reference_model: ModelSpec,
    pub alpha: f64,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            folds: vec![1, 3, 5],
            mc_draws: 100,
            models: vec![ModelSpec::ols()],
            seed: 0,
            reference_model: ModelSpec::ols(),
            alpha: 0.05,
        }
    }
}

impl StressConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds.is_empty() || self.folds.contains(&0) {
            return Err(Error::InvalidArgument("every fold count must be at least 1".into()));
        }
        if self.mc_draws == 0 {
            return Err(Error::InvalidArgument("mc_draws must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("no models given".into()));
        }
        for m in self.models.iter().chain([&self.reference_model]) {
            m.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRecord {
    pub model_id: String,
    pub folds: usize,
    pub draw: usize,
    pub ate: Option<f64>,
    /// `|ATE - ATE_ref| / |ATE_ref|`, or the absolute difference when the
    /// reference is zero.
    pub err: Option<f64>,
    pub vr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressSummary {
    pub model_id: String,
    pub folds: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median_err: Option<f64>,
    pub err_quartiles: Option<[f64; 3]>,
    pub median_vr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub n_units: usize,
    pub k: usize,
    pub reference_model: String,
    pub reference_ate: f64,
    /// False when the reference estimate is zero and errors are absolute.
    pub relative_errors: bool,
    pub constant_columns: Vec<usize>,
    pub records: Vec<StressRecord>,
    pub summaries: Vec<StressSummary>,
}

impl StressReport {
    pub fn summary(&self, model_id: &str, folds: usize) -> Option<&StressSummary> {
        self.summaries
            .iter()
            .find(|s| s.model_id == model_id && s.folds == folds)
    }

    /// Writes `model,L,quartile_or_N,median_err,median_vr,runtime_ms`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "L", "quartile_or_N", "median_err", "median_vr", "runtime_ms"])?;
        for s in &self.summaries {
            w.write_record([
                s.model_id.clone(),
                s.folds.to_string(),
                self.n_units.to_string(),
                opt(s.median_err),
                opt(s.median_vr),
                String::new(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<stress csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn record(
    model: &ModelSpec,
    folds: usize,
    draw: usize,
    result: Result<AteEstimate>,
    reference: f64,
    dim: &AteEstimate,
) -> StressRecord {
    let id = model.to_string();
    match result {
        Ok(e) => {
            let diff = (e.ate - reference).abs();
            StressRecord {
                model_id: id,
                folds,
                draw,
                ate: Some(e.ate),
                err: Some(if reference != 0.0 { diff / reference.abs() } else { diff }),
                vr: variance_reduction(&e, dim),
                failure: None,
            }
        }
        Err(err) => StressRecord {
            model_id: id,
            folds,
            draw,
            ate: None,
            err: None,
            vr: None,
            failure: Some(err.to_string()),
        },
    }
}

/// Refits every model on `mc_draws` independent augmentations per fold
/// count and measures drift from the reference estimate.
pub fn error_distribution(data: &ExperimentData, config: &StressConfig) -> Result<StressReport> {
    config.validate()?;
    let reference = estimate(
        data,
        &config.reference_model,
        config.alpha,
        derive_named(config.seed, "reference", 0),
    )?;
    let dim = estimate(data, &ModelSpec::dim(), config.alpha, 0)?;

    let jobs: Vec<(usize, usize)> = config
        .folds
        .iter()
        .flat_map(|&l| (0..config.mc_draws).map(move |s| (l, s)))
        .collect();
    let per_job: Vec<Vec<StressRecord>> = jobs
        .par_iter()
        .map(|&(l, s)| {
            let draw_seed = derive_seed(derive_named(config.seed, "stress-draw", l as u64), s as u64);
            let model_seed = derive_named(draw_seed, "model", 0);
            match augment(data, l, draw_seed) {
                Ok(aug) => config
                    .models
                    .iter()
                    .map(|m| {
                        let r = estimate(&aug, m, config.alpha, model_seed);
                        record(m, l, s, r, reference.ate, &dim)
                    })
                    .collect(),
                Err(e) => config
                    .models
                    .iter()
                    .map(|m| record(m, l, s, Err(Error::Fit(e.to_string())), reference.ate, &dim))
                    .collect(),
            }
        })
        .collect();
    let records: Vec<StressRecord> = per_job.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for m in &config.models {
        let id = m.to_string();
        for &l in &config.folds {
            let rows: Vec<&StressRecord> = records
                .iter()
                .filter(|r| r.model_id == id && r.folds == l)
                .collect();
            let errs: Vec<f64> = rows.iter().filter_map(|r| r.err).collect();
            let vrs: Vec<f64> = rows.iter().filter_map(|r| r.vr).collect();
            let some = !errs.is_empty();
            summaries.push(StressSummary {
                model_id: id.clone(),
                folds: l,
                n_ok: errs.len(),
                n_failed: rows.len() - errs.len(),
                median_err: some.then(|| stats::median(&errs)),
                err_quartiles: some.then(|| {
                    [
                        stats::quantile(&errs, 0.25),
                        stats::quantile(&errs, 0.5),
                        stats::quantile(&errs, 0.75),
                    ]
                }),
                median_vr: (!vrs.is_empty()).then(|| stats::median(&vrs)),
            });
        }
    }
    Ok(StressReport {
        n_units: data.len(),
        k: data.k(),
        reference_model: config.reference_model.to_string(),
        reference_ate: reference.ate,
        relative_errors: reference.ate != 0.0,
        constant_columns: constant_columns(data),
        records,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n_units: usize,
    pub folds: usize,
    pub model_id: String,
    /// Best of three wall-clock runs.
    pub runtime_ms: f64,
    pub ratio_to_dim: f64,
}

/// Times every model on synthetic data for each `(N, L)` pair.
///
/// Fits run on a single-threaded pool. `L = 0` times the unaugmented data.
/// DIM is always timed, to provide the ratio denominator, but only appears
/// in the table when listed in `models`.
pub fn timing_profile(
    data_sizes: &[usize],
    folds_list: &[usize],
    models: &[ModelSpec],
    k_covariates: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Fit(format!("thread pool: {e}")))?;
    let mut rows = Vec::with_capacity(data_sizes.len() * folds_list.len() * models.len());
    for &n in data_sizes {
        let base = generate(&SyntheticConfig {
            n_units: n,
            k_covariates,
            outcome_cor: 0.5,
            true_ate: 0.1,
            seed: derive_named(seed, "timing-data", n as u64),
            ..SyntheticConfig::default()
        })?;
        for &l in folds_list {
            let data = if l == 0 { base.clone() } else { augment(&base, l, seed)? };
            let time = |spec: &ModelSpec| -> Result<f64> {
                let mut best = f64::INFINITY;
                for _ in 0..3 {
                    let start = Instant::now();
                    pool.install(|| estimate(&data, spec, 0.05, seed))?;
                    best = best.min(start.elapsed().as_secs_f64() * 1e3);
                }
                Ok(best)
            };
            let dim_ms = time(&ModelSpec::dim())?;
            for m in models {
                let ms = if m.is_dim() { dim_ms } else { time(m)? };
                rows.push(TimingRow {
                    n_units: n,
                    folds: l,
                    model_id: m.to_string(),
                    runtime_ms: ms,
                    ratio_to_dim: if m.is_dim() { 1.0 } else { ms / dim_ms },
                });
            }
        }
    }
    Ok(rows)
}

/// Writes timing rows in the stress CSV layout.
pub fn write_timing_csv<W: Write>(rows: &[TimingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "L", "quartile_or_N", "median_err", "median_vr", "runtime_ms"])?;
    for r in rows {
        w.write_record([
            r.model_id.clone(),
            r.folds.to_string(),
            r.n_units.to_string(),
            String::new(),
            String::new(),
            format!("{:?}", r.runtime_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<timing csv>".into(),
        source: e,
    })?;
    Ok(())
}
