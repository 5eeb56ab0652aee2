//! A/A re-randomization harness.
//!
//! One arm is repeatedly split at random into two pseudo-arms, so the true
//! effect is exactly zero. Each split records the pre-period imbalance ζ and
//! every model's estimate, and [`bucket_metrics`] summarizes estimator
//! behavior conditional on ζ.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ExperimentData;
use crate::error::{Error, Result};
use crate::estimator::estimate_sample;
use crate::regression::ModelSpec;
use crate::rng::{derive_named, derive_seed, rng_from_seed};
use crate::stats;

/// Smallest arm the harness accepts.
pub const MIN_ARM_UNITS: usize = 4;

/// One model's result on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitEstimate {
    pub ate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl SplitEstimate {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: usize,
    pub zeta: f64,
    /// Indexed like [`AaRun::models`]; `None` marks a failed fit.
    pub estimates: Vec<Option<SplitEstimate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaRun {
    pub arm: u8,
    pub n_units: usize,
    pub s_splits: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Always 0: both pseudo-arms come from the same population.
    pub true_ate: f64,
    /// Model identifiers; DIM comes first.
    pub models: Vec<String>,
    pub records: Vec<SplitRecord>,
    /// Failed splits per model.
    pub failures: Vec<usize>,
    /// First error message per model, if any.
    pub failure_examples: Vec<Option<String>>,
}

impl AaRun {
    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m == id)
    }

    pub fn zetas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.zeta).collect()
    }

    /// `(ζ, ATE)` pairs for successful splits of model `m`.
    pub fn pairs(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        self.records
            .iter()
            .filter_map(|r| r.estimates[m].map(|e| (r.zeta, e.ate)))
            .unzip()
    }

    /// Least-squares slope of the estimates on ζ.
    pub fn conditional_bias_slope(&self, m: usize) -> f64 {
        let (z, a) = self.pairs(m);
        stats::ls_slope(&z, &a)
    }

    /// Fraction of successful splits whose interval contains zero.
    pub fn pooled_coverage(&self, m: usize) -> Option<f64> {
        let est: Vec<_> = self.records.iter().filter_map(|r| r.estimates[m]).collect();
        if est.is_empty() {
            return None;
        }
        Some(est.iter().filter(|e| e.covers(self.true_ate)).count() as f64 / est.len() as f64)
    }

    /// Writes `s,zeta,model,ate,ci_lo,ci_hi`, one row per split and model.
    /// Failed fits leave the last three fields empty.
    pub fn write_split_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "zeta", "model", "ate", "ci_lo", "ci_hi"])?;
        for r in &self.records {
            for (m, id) in self.models.iter().enumerate() {
                let s = r.split.to_string();
                let zeta = format!("{:?}", r.zeta);
                match r.estimates[m] {
                    Some(e) => w.write_record([
                        s.as_str(),
                        &zeta,
                        id,
                        &format!("{:?}", e.ate),
                        &format!("{:?}", e.ci_lo),
                        &format!("{:?}", e.ci_hi),
                    ])?,
                    None => w.write_record([s.as_str(), &zeta, id, "", "", ""])?,
                }
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "<split csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// DIM first, then the requested models in order without duplicates.
fn model_list(models: &[ModelSpec]) -> Vec<ModelSpec> {
    let mut out = vec![ModelSpec::dim()];
    for m in models {
        if !out.iter().any(|o| o.to_string() == m.to_string()) {
            out.push(m.clone());
        }
    }
    out
}

/// Re-randomizes arm `arm` of `data` `s_splits` times.
///
/// Split `s` shuffles the arm with a seed derived from `(seed, s)` and
/// assigns the first `⌊n/2⌋` shuffled units to pseudo-treatment, so the
/// result does not depend on thread scheduling.
pub fn run_aa(
    data: &ExperimentData,
    arm: u8,
    models: &[ModelSpec],
    s_splits: usize,
    alpha: f64,
    seed: u64,
) -> Result<AaRun> {
    if s_splits == 0 {
        return Err(Error::InvalidArgument("s_splits must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let subset = data.restrict_to_arm(arm)?;
    let n = subset.len();
    if n < MIN_ARM_UNITS {
        return Err(Error::InsufficientData(format!(
            "arm {arm} has {n} units; the A/A harness needs at least {MIN_ARM_UNITS}"
        )));
    }
    for m in models {
        m.validate()?;
    }
    let specs = model_list(models);
    let sample = subset.sample();
    let x = subset.pre_period();
    let half = n / 2;

    let results: Vec<(SplitRecord, Vec<Option<String>>)> = (0..s_splits)
        .into_par_iter()
        .map(|s| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_from_seed(derive_seed(seed, s as u64)));
            let mut assignment = vec![0u8; n];
            for &i in &order[..half] {
                assignment[i] = 1;
            }
            let (mut s1, mut s0) = (Vec::with_capacity(half), Vec::with_capacity(n - half));
            for (i, &j) in assignment.iter().enumerate() {
                if j == 1 { s1.push(x[i]) } else { s0.push(x[i]) }
            }
            let zeta = stats::mean(&s1) - stats::mean(&s0);
            let model_seed = derive_named(seed, "aa-model", s as u64);
            let mut estimates = Vec::with_capacity(specs.len());
            let mut errors = Vec::with_capacity(specs.len());
            for spec in &specs {
                match estimate_sample(sample, &assignment, spec, alpha, model_seed) {
                    Ok(e) => {
                        estimates.push(Some(SplitEstimate {
                            ate: e.ate,
                            ci_lo: e.ci.0,
                            ci_hi: e.ci.1,
                        }));
                        errors.push(None);
                    }
                    Err(err) => {
                        estimates.push(None);
                        errors.push(Some(err.to_string()));
                    }
                }
            }
            (SplitRecord { split: s, zeta, estimates }, errors)
        })
        .collect();

    let mut failures = vec![0usize; specs.len()];
    let mut failure_examples = vec![None; specs.len()];
    let mut records = Vec::with_capacity(s_splits);
    for (rec, errs) in results {
        for (m, e) in errs.into_iter().enumerate() {
            if let Some(msg) = e {
                failures[m] += 1;
                failure_examples[m].get_or_insert(msg);
            }
        }
        records.push(rec);
    }
    Ok(AaRun {
        arm,
        n_units: n,
        s_splits,
        alpha,
        seed,
        true_ate: 0.0,
        models: specs.iter().map(|s| s.to_string()).collect(),
        records,
        failures,
        failure_examples,
    })
}

/// Per-model metrics inside one bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBucket {
    pub model_id: String,
    /// Successful splits contributing to the metrics.
    pub n_valid: usize,
    pub mse: Option<f64>,
    pub median_dist: Option<f64>,
    pub excess_frac: Option<f64>,
    pub coverage: Option<f64>,
    /// Relative to DIM: `(DIM - M) / DIM`; absent for DIM itself and when
    /// the DIM metric is zero.
    pub r_mse: Option<f64>,
    pub r_median_dist: Option<f64>,
    pub r_excess_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// 1-based.
    pub index: usize,
    pub size: usize,
    pub zeta_range: (f64, f64),
    /// Split indices in this bucket, in ζ order. Not serialized; the
    /// per-split CSV carries the same information.
    #[serde(skip_serializing, default)]
    pub splits: Vec<usize>,
    pub models: Vec<ModelBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub kappa: usize,
    pub alpha: f64,
    pub true_ate: f64,
    pub buckets: Vec<Bucket>,
}

/// Squared error of the estimates around `truth`, averaged.
pub fn mse(values: &[f64], truth: f64) -> f64 {
    stats::sum(values.iter().map(|v| (v - truth) * (v - truth))) / values.len() as f64
}

/// Squared distance of the median to `truth`.
pub fn median_dist(values: &[f64], truth: f64) -> f64 {
    let d = stats::median(values) - truth;
    d * d
}

/// `(max(share below, share above) - ½) / ½`, values equal to `truth`
/// counting on neither side, floored at 0.
pub fn excess_frac(values: &[f64], truth: f64) -> f64 {
    let n = values.len() as f64;
    let below = values.iter().filter(|&&v| v < truth).count() as f64 / n;
    let above = values.iter().filter(|&&v| v > truth).count() as f64 / n;
    ((below.max(above) - 0.5) / 0.5).max(0.0)
}

fn relative(dim: Option<f64>, m: Option<f64>) -> Option<f64> {
    match (dim, m) {
        (Some(d), Some(m)) if d != 0.0 => Some((d - m) / d),
        _ => None,
    }
}

/// Sorts splits by ζ (ties by split index), cuts them into `kappa`
/// equal-count buckets and computes the robustness metrics per bucket.
pub fn bucket_metrics(run: &AaRun, kappa: usize) -> Result<BucketMetrics> {
    let s = run.records.len();
    if kappa == 0 || kappa > s {
        return Err(Error::InvalidArgument(format!(
            "kappa must lie in 1..={s} (the number of splits), got {kappa}"
        )));
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| run.records[a].zeta.total_cmp(&run.records[b].zeta));
    let truth = run.true_ate;
    let dim = run.model_index(&ModelSpec::dim().to_string());

    let mut buckets = Vec::with_capacity(kappa);
    for j in 0..kappa {
        let members = &order[j * s / kappa..(j + 1) * s / kappa];
        let zetas: Vec<f64> = members.iter().map(|&i| run.records[i].zeta).collect();
        let mut models: Vec<ModelBucket> = run
            .models
            .iter()
            .enumerate()
            .map(|(m, id)| {
                let est: Vec<SplitEstimate> =
                    members.iter().filter_map(|&i| run.records[i].estimates[m]).collect();
                let ates: Vec<f64> = est.iter().map(|e| e.ate).collect();
                let some = !ates.is_empty();
                ModelBucket {
                    model_id: id.clone(),
                    n_valid: ates.len(),
                    mse: some.then(|| mse(&ates, truth)),
                    median_dist: some.then(|| median_dist(&ates, truth)),
                    excess_frac: some.then(|| excess_frac(&ates, truth)),
                    coverage: some.then(|| {
                        est.iter().filter(|e| e.covers(truth)).count() as f64 / est.len() as f64
                    }),
                    r_mse: None,
                    r_median_dist: None,
                    r_excess_frac: None,
                }
            })
            .collect();
        if let Some(d) = dim {
            let base = models[d].clone();
            for (m, mb) in models.iter_mut().enumerate() {
                if m != d {
                    mb.r_mse = relative(base.mse, mb.mse);
                    mb.r_median_dist = relative(base.median_dist, mb.median_dist);
                    mb.r_excess_frac = relative(base.excess_frac, mb.excess_frac);
                }
            }
        }
        buckets.push(Bucket {
            index: j + 1,
            size: members.len(),
            zeta_range: (zetas[0], zetas[zetas.len() - 1]),
            splits: members.iter().map(|&i| run.records[i].split).collect(),
            models,
        });
    }
    Ok(BucketMetrics {
        kappa,
        alpha: run.alpha,
        true_ate: truth,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn control_arm(y: Vec<f64>, x: Vec<f64>) -> ExperimentData {
        let n = y.len();
        let mut assignment = vec![0u8; n];
        assignment[n - 1] = 1;
        ExperimentData::new(
            (0..n).map(|i| i.to_string()).collect(),
            assignment,
            y,
            x,
            vec!["x".into()],
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mse(&[0.0, 0.0], 0.0), 0.0);
        assert_eq!(median_dist(&[0.0, 0.0], 0.0), 0.0);
        assert_eq!(excess_frac(&[0.0, 0.0], 0.0), 0.0);
        assert_eq!(excess_frac(&[1.0, 2.0, 3.0], 0.0), 1.0);
        assert_eq!(mse(&[-1.0, 1.0], 0.0), 1.0);
        assert_eq!(median_dist(&[-1.0, 1.0], 0.0), 0.0);
        assert_eq!(excess_frac(&[-1.0, 1.0], 0.0), 0.0);
    }

    #[test]
    fn splits_are_halves_and_reproducible() {
        let x: Vec<f64> = (0..41).map(|i| (i as f64).sin()).collect();
        let d = control_arm(x.clone(), x);
        let a = run_aa(&d, 0, &[ModelSpec::ols()], 50, 0.05, 3).unwrap();
        let b = run_aa(&d, 0, &[ModelSpec::ols()], 50, 0.05, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.models, vec!["dim".to_string(), "ols".to_string()]);
        assert_eq!(a.n_units, 40);
        for r in &a.records {
            let e = r.estimates[0].unwrap();
            assert!((e.ate - r.zeta).abs() < 1e-12);
            assert!(r.estimates[1].unwrap().ate.abs() < 1e-8);
        }
    }

    #[test]
    fn constant_outcome_gives_zero_everywhere() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.37 % 1.9).collect();
        let d = control_arm(vec![4.5; 30], x);
        let run = run_aa(&d, 0, &[ModelSpec::ols(), "ridge".parse().unwrap()], 20, 0.05, 1).unwrap();
        for r in &run.records {
            for e in r.estimates.iter().flatten() {
                assert!(e.ate.abs() < 1e-12);
            }
        }
        let bm = bucket_metrics(&run, 4).unwrap();
        let ols = &bm.buckets[0].models[1];
        assert_eq!(ols.mse, Some(0.0));
        assert_eq!(ols.r_mse, None);
    }

    #[test]
    fn buckets_partition_the_splits() {
        let x: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 2.0 + 1.0).collect();
        let d = control_arm(y, x);
        let run = run_aa(&d, 0, &[], 103, 0.05, 9).unwrap();
        let bm = bucket_metrics(&run, 10).unwrap();
        let mut seen: Vec<usize> = bm.buckets.iter().flat_map(|b| b.splits.clone()).collect();
        let sizes: Vec<usize> = bm.buckets.iter().map(|b| b.size).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        seen.sort();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        for w in bm.buckets.windows(2) {
            assert!(w[0].zeta_range.1 <= w[1].zeta_range.0);
        }
        assert!(bucket_metrics(&run, 104).is_err());
    }

    #[test]
    fn small_arm_rejected() {
        let d = control_arm(vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            run_aa(&d, 0, &[], 5, 0.05, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn split_csv_has_one_row_per_split_and_model() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let d = control_arm(x.clone(), x);
        let run = run_aa(&d, 0, &[ModelSpec::ols()], 7, 0.05, 0).unwrap();
        let mut buf = Vec::new();
        run.write_split_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 7 * 2);
    }
}
