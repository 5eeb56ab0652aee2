//! Generalized Oaxaca-Blinder estimation: fit one outcome model per arm,
//! impute each unit's missing potential outcome from the other arm's model,
//! and average the imputed differences.

use serde::{Deserialize, Serialize};

use crate::dataset::{ArmSubset, ExperimentData};
use crate::error::{Error, Result};
use crate::regression::{self, ArmData, FittedArmModel, ModelKind, ModelSpec};
use crate::rng::derive_named;
use crate::stats;

/// Outcome of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub model_id: String,
    pub ate: f64,
    /// `ate / |Ȳ₀|`, absent when the observed control mean is zero.
    pub lift: Option<f64>,
    /// ATE interval endpoints divided by `|Ȳ₀|` (denominator noise ignored).
    pub lift_ci: Option<(f64, f64)>,
    pub variance: f64,
    /// `(MSE₀, MSE₁)`.
    pub mse_per_arm: (f64, f64),
    pub ci: (f64, f64),
    /// Significance level; the interval has nominal coverage `1 - alpha`.
    pub alpha: f64,
    /// `(|I₀|, |I₁|)`.
    pub n_per_arm: (usize, usize),
    /// Observed control-arm mean `Ȳ₀`.
    pub control_mean: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AteEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }
}

/// Borrowed outcome/covariate columns, independent of any assignment.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub outcome: &'a [f64],
    /// Row-major `n × k`.
    pub covariates: &'a [f64],
    pub k: usize,
    pub pre_period_col: usize,
}

impl<'a> Sample<'a> {
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn row(&self, n: usize) -> &'a [f64] {
        &self.covariates[n * self.k..(n + 1) * self.k]
    }

    fn arm(&self, idx: &[usize]) -> ArmData {
        let mut z = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            z.extend_from_slice(self.row(i));
        }
        ArmData {
            y: idx.iter().map(|&i| self.outcome[i]).collect(),
            z,
            k: self.k,
            pre_period_col: self.pre_period_col,
        }
    }
}

impl ExperimentData {
    pub fn sample(&self) -> Sample<'_> {
        Sample {
            outcome: self.outcome(),
            covariates: self.covariates(),
            k: self.k(),
            pre_period_col: self.pre_period_col(),
        }
    }

    /// Outcomes and covariates of arm `t`.
    pub fn arm_data(&self, arm: u8) -> ArmData {
        self.sample().arm(&self.arm_indices(arm))
    }
}

impl ArmSubset {
    pub fn sample(&self) -> Sample<'_> {
        Sample {
            outcome: &self.outcome,
            covariates: &self.covariates,
            k: self.k,
            pre_period_col: self.pre_period_col,
        }
    }
}

/// The pair `{f₀, f₁}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModels {
    pub control: FittedArmModel,
    pub treatment: FittedArmModel,
}

impl ArmModels {
    pub fn get(&self, arm: u8) -> &FittedArmModel {
        if arm == 0 {
            &self.control
        } else {
            &self.treatment
        }
    }
}

fn arm_seed(seed: u64, arm: u8) -> u64 {
    derive_named(seed, "arm-fit", arm as u64)
}

fn split_arms(assignment: &[u8]) -> Result<[Vec<usize>; 2]> {
    let mut arms = [Vec::new(), Vec::new()];
    for (i, &j) in assignment.iter().enumerate() {
        match j {
            0 | 1 => arms[j as usize].push(i),
            other => {
                return Err(Error::Validation(format!(
                    "row {}: assignment {other} is not 0 or 1",
                    i + 1
                )))
            }
        }
    }
    Ok(arms)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// Fits `spec` separately on each arm.
pub fn fit_arms(data: &ExperimentData, spec: &ModelSpec, seed: u64) -> Result<ArmModels> {
    fit_arm_models(data.sample(), data.assignment(), spec, seed)
}

fn fit_arm_models(
    sample: Sample<'_>,
    assignment: &[u8],
    spec: &ModelSpec,
    seed: u64,
) -> Result<ArmModels> {
    let arms = split_arms(assignment)?;
    let d0 = sample.arm(&arms[0]);
    let d1 = sample.arm(&arms[1]);
    let (control, treatment) = rayon::join(
        || regression::fit(spec, &d0, arm_seed(seed, 0)),
        || regression::fit(spec, &d1, arm_seed(seed, 1)),
    );
    Ok(ArmModels {
        control: control?,
        treatment: treatment?,
    })
}

/// Potential-outcome table: row `n` is `[Ŷₙ(0), Ŷₙ(1)]`.
///
/// The observed arm keeps `Yₙ` bit for bit; the other is predicted by that
/// arm's model.
pub fn impute(data: &ExperimentData, models: &ArmModels) -> Result<Vec<[f64; 2]>> {
    let (n0, n1) = data.arm_sizes();
    for (arm, n) in [(0u8, n0), (1, n1)] {
        let m = models.get(arm);
        if m.n_obs != n || m.input_k != data.k() {
            return Err(Error::InvalidArgument(format!(
                "model for arm {arm} was fitted on {} units × {} covariates, data has {n} × {}",
                m.n_obs,
                m.input_k,
                data.k()
            )));
        }
    }
    impute_sample(data.sample(), data.assignment(), models)
}

fn impute_sample(
    sample: Sample<'_>,
    assignment: &[u8],
    models: &ArmModels,
) -> Result<Vec<[f64; 2]>> {
    (0..sample.len())
        .map(|n| {
            let j = assignment[n];
            let y = sample.outcome[n];
            let other = models.get(1 - j).predict(sample.row(n))?;
            Ok(if j == 0 { [y, other] } else { [other, y] })
        })
        .collect()
}

/// Runs the estimator for `spec` on `data` at significance `alpha`.
pub fn estimate(data: &ExperimentData, spec: &ModelSpec, alpha: f64, seed: u64) -> Result<AteEstimate> {
    estimate_sample(data.sample(), data.assignment(), spec, alpha, seed)
}

/// As [`estimate`], on borrowed columns with an explicit assignment vector.
pub fn estimate_sample(
    sample: Sample<'_>,
    assignment: &[u8],
    spec: &ModelSpec,
    alpha: f64,
    seed: u64,
) -> Result<AteEstimate> {
    check_alpha(alpha)?;
    if assignment.len() != sample.len() {
        return Err(Error::InvalidArgument("assignment length mismatch".into()));
    }
    if let ModelKind::TwoStep(base) = &spec.kind {
        return two_step_sample(sample, assignment, base, alpha, seed);
    }
    let arms = split_arms(assignment)?;
    require_two_per_arm(&arms)?;
    let models = fit_arm_models(sample, assignment, spec, seed)?;
    let imputed = impute_sample(sample, assignment, &models)?;

    let residual = |arm: usize| -> Result<Vec<f64>> {
        let m = models.get(arm as u8);
        arms[arm]
            .iter()
            .map(|&n| Ok(sample.outcome[n] - m.predict(sample.row(n))?))
            .collect()
    };
    let resid = [residual(0)?, residual(1)?];
    let mut warnings = Vec::new();
    for (arm, m) in [(0, &models.control), (1, &models.treatment)] {
        collect_warnings(arm, m, &mut warnings);
    }
    Ok(assemble(
        spec.to_string(),
        sample,
        &arms,
        &imputed,
        &resid,
        alpha,
        warnings,
    ))
}

fn require_two_per_arm(arms: &[Vec<usize>; 2]) -> Result<()> {
    for (t, idx) in arms.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "arm {t} has {} unit(s); the MSE needs at least 2 units per arm",
                idx.len()
            )));
        }
    }
    Ok(())
}

fn collect_warnings(arm: usize, m: &FittedArmModel, out: &mut Vec<String>) {
    if m.degenerate {
        out.push(format!("arm {arm}: no usable covariates, model reduced to the arm mean"));
    } else if !m.dropped_columns.is_empty() {
        out.push(format!(
            "arm {arm}: dropped zero-variance columns {:?}",
            m.dropped_columns
        ));
    }
    if m.rank_deficient {
        out.push(format!("arm {arm}: rank-deficient design, minimum-norm solution used"));
    }
}

fn assemble(
    model_id: String,
    sample: Sample<'_>,
    arms: &[Vec<usize>; 2],
    imputed: &[[f64; 2]],
    resid: &[Vec<f64>; 2],
    alpha: f64,
    warnings: Vec<String>,
) -> AteEstimate {
    let n = imputed.len() as f64;
    let ate = stats::sum(imputed.iter().map(|p| p[1] - p[0])) / n;
    let mse = |t: usize| {
        stats::sum(resid[t].iter().map(|r| r * r)) / (arms[t].len() as f64 - 1.0)
    };
    let (mse0, mse1) = (mse(0), mse(1));
    let variance = mse1 / arms[1].len() as f64 + mse0 / arms[0].len() as f64;
    let half = stats::z_critical(alpha) * variance.sqrt();
    let ci = (ate - half, ate + half);
    let control_mean =
        stats::sum(arms[0].iter().map(|&i| sample.outcome[i])) / arms[0].len() as f64;
    let denom = control_mean.abs();
    let (lift, lift_ci) = if denom > 0.0 {
        (Some(ate / denom), Some((ci.0 / denom, ci.1 / denom)))
    } else {
        (None, None)
    };
    AteEstimate {
        model_id,
        ate,
        lift,
        lift_ci,
        variance,
        mse_per_arm: (mse0, mse1),
        ci,
        alpha,
        n_per_arm: (arms[0].len(), arms[1].len()),
        control_mean,
        warnings,
    }
}

/// Two-step estimator: a base estimator's cross-arm predictions become the
/// single covariate of a second, OLS-based estimator.
///
/// Arm `t`'s second-stage model regresses `Y` on `f̂_{1-t}(z)` (the other
/// arm's first-stage prediction) and is evaluated on the same feature when
/// imputing.
pub fn estimate_two_step(
    data: &ExperimentData,
    base: &ModelSpec,
    alpha: f64,
    seed: u64,
) -> Result<AteEstimate> {
    check_alpha(alpha)?;
    two_step_sample(data.sample(), data.assignment(), base, alpha, seed)
}

fn two_step_sample(
    sample: Sample<'_>,
    assignment: &[u8],
    base: &ModelSpec,
    alpha: f64,
    seed: u64,
) -> Result<AteEstimate> {
    if matches!(base.kind, ModelKind::TwoStep(_)) {
        return Err(Error::InvalidArgument("two_step cannot be nested".into()));
    }
    let arms = split_arms(assignment)?;
    require_two_per_arm(&arms)?;
    let first = fit_arm_models(sample, assignment, base, derive_named(seed, "two-step", 1))?;

    // feature[t][n] = f̂_{1-t}(z_n): the input to arm t's second-stage model.
    let feature = |t: u8| -> Result<Vec<f64>> {
        let m = first.get(1 - t);
        (0..sample.len()).map(|n| m.predict(sample.row(n))).collect()
    };
    let features = [feature(0)?, feature(1)?];

    let ols = ModelSpec::ols();
    let mut second = Vec::with_capacity(2);
    for t in 0..2usize {
        let arm = ArmData {
            y: arms[t].iter().map(|&i| sample.outcome[i]).collect(),
            z: arms[t].iter().map(|&i| features[t][i]).collect(),
            k: 1,
            pre_period_col: 0,
        };
        second.push(regression::fit(&ols, &arm, 0)?);
    }

    let mut imputed = Vec::with_capacity(sample.len());
    for n in 0..sample.len() {
        let j = assignment[n] as usize;
        let other = 1 - j;
        let pred = second[other].predict(&[features[other][n]])?;
        let y = sample.outcome[n];
        imputed.push(if j == 0 { [y, pred] } else { [pred, y] });
    }
    let mut resid = [Vec::new(), Vec::new()];
    for t in 0..2 {
        for &i in &arms[t] {
            resid[t].push(sample.outcome[i] - second[t].predict(&[features[t][i]])?);
        }
    }
    let mut warnings = Vec::new();
    collect_warnings(0, &first.control, &mut warnings);
    collect_warnings(1, &first.treatment, &mut warnings);
    Ok(assemble(
        format!("two_step:{base}"),
        sample,
        &arms,
        &imputed,
        &resid,
        alpha,
        warnings,
    ))
}

/// Percentage variance reduction `100·(1 - Var_M / Var_DIM)`; `None` when
/// the baseline variance is zero or not finite.
pub fn variance_reduction(candidate: &AteEstimate, baseline_dim: &AteEstimate) -> Option<f64> {
    let base = baseline_dim.variance;
    if base > 0.0 && base.is_finite() && candidate.variance.is_finite() {
        Some(100.0 * (1.0 - candidate.variance / base))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(assignment: Vec<u8>, outcome: Vec<f64>, z: Vec<f64>) -> ExperimentData {
        let n = outcome.len();
        let k = z.len() / n;
        ExperimentData::new(
            (0..n).map(|i| i.to_string()).collect(),
            assignment,
            outcome,
            z,
            (0..k).map(|i| format!("c{i}")).collect(),
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn dim_closed_form() {
        let d = data(
            vec![0, 0, 0, 1, 1],
            vec![1.0, 2.0, 3.0, 4.0, 6.0],
            vec![0.3, 0.1, 0.7, 0.2, 0.9],
        );
        let est = estimate(&d, &ModelSpec::dim(), 0.05, 0).unwrap();
        assert!((est.ate - 3.0).abs() < 1e-12);
        assert_eq!(est.n_per_arm, (3, 2));
        assert_eq!(est.mse_per_arm, (1.0, 2.0));
        assert!((est.variance - (2.0 / 2.0 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(est.control_mean, 2.0);
        assert!((est.lift.unwrap() - 1.5).abs() < 1e-12);
        let (lo, hi) = est.lift_ci.unwrap();
        assert!((lo - est.ci.0 / 2.0).abs() < 1e-12 && (hi - est.ci.1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn imputation_keeps_observed_and_uses_group_means() {
        let d = data(
            vec![0, 0, 1, 1],
            vec![1.0, 3.0, 7.0, 3.0],
            vec![0.0, 1.0, 2.0, 3.0],
        );
        let models = fit_arms(&d, &ModelSpec::dim(), 0).unwrap();
        let table = impute(&d, &models).unwrap();
        assert_eq!(table[2][1].to_bits(), 7.0f64.to_bits());
        assert_eq!(table[0], [1.0, 5.0]);
        assert_eq!(table[3], [2.0, 3.0]);
    }

    #[test]
    fn impute_rejects_mismatched_models() {
        let d = data(vec![0, 0, 1], vec![1.0, 3.0, 7.0], vec![0.0, 1.0, 2.0]);
        let models = fit_arms(&d, &ModelSpec::dim(), 0).unwrap();
        let swapped = ArmModels {
            control: models.treatment.clone(),
            treatment: models.control.clone(),
        };
        assert!(impute(&d, &swapped).is_err());
    }

    #[test]
    fn single_unit_arm_is_rejected() {
        let d = data(vec![0, 0, 1], vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            estimate(&d, &ModelSpec::dim(), 0.05, 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(estimate(&d, &ModelSpec::dim(), 1.5, 0).is_err());
    }

    #[test]
    fn zero_control_mean_leaves_lift_undefined() {
        let d = data(vec![0, 0, 1, 1], vec![-1.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 4.0]);
        let est = estimate(&d, &ModelSpec::dim(), 0.05, 0).unwrap();
        assert!(est.lift.is_none() && est.lift_ci.is_none());
    }

    #[test]
    fn variance_reduction_arithmetic() {
        let d = data(vec![0, 0, 1, 1], vec![-1.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 4.0]);
        let base = estimate(&d, &ModelSpec::dim(), 0.05, 0).unwrap();
        assert_eq!(variance_reduction(&base, &base), Some(0.0));
        let mut cand = base.clone();
        cand.variance = 0.36 * base.variance;
        assert!((variance_reduction(&cand, &base).unwrap() - 64.0).abs() < 1e-9);
        let mut zero = base.clone();
        zero.variance = 0.0;
        assert_eq!(variance_reduction(&cand, &zero), None);
    }
}
