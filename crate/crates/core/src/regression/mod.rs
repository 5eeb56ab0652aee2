//! Per-arm outcome models behind one fit/predict contract.
//!
//! Every fit standardizes its covariates (mean 0, population sd 1) and
//! never penalizes the intercept. Zero-variance columns are dropped and
//! recorded. Penalized kinds minimize
//!
//! ```text
//! (1/2n)‖y - ȳ - Z̃θ‖² + γ·[λ‖θ‖₁ + (1-λ)/2·‖θ‖²]
//! ```
//!
//! with λ = 0 for ridge and λ = 1 for lasso.

mod cv;
mod penalized;
mod spec;
mod tweedie;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::stats;

pub use cv::{cross_validate, default_grid, gamma_max, CvOutcome};
pub use penalized::{coordinate_descent, CdResult};
pub use spec::{
    parse_model_list, ColumnSelection, ModelKind, ModelSpec, PcrComponents, DEFAULT_CV_FOLDS,
    DEFAULT_PCR_VARIANCE, DEFAULT_TWEEDIE_POWER,
};

/// Coordinate-descent stopping rule: max coefficient change.
pub const CD_TOLERANCE: f64 = 1e-8;
pub const CD_MAX_SWEEPS: usize = 10_000;
pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOLERANCE: f64 = 1e-10;

/// Outcomes and covariates of the units in one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmData {
    pub y: Vec<f64>,
    /// Row-major `n × k`.
    pub z: Vec<f64>,
    pub k: usize,
    pub pre_period_col: usize,
}

impl ArmData {
    pub fn new(y: Vec<f64>, z: Vec<f64>, k: usize, pre_period_col: usize) -> Result<Self> {
        if z.len() != y.len() * k {
            return Err(Error::InvalidArgument(format!(
                "covariate block has {} values, expected {}×{k}",
                z.len(),
                y.len()
            )));
        }
        Ok(ArmData {
            y,
            z,
            k,
            pre_period_col,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    /// Rows `idx` as a new arm.
    pub fn subset(&self, idx: &[usize]) -> ArmData {
        let mut z = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            z.extend_from_slice(self.row(i));
        }
        ArmData {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z,
            k: self.k,
            pre_period_col: self.pre_period_col,
        }
    }
}

/// Per-column standardization applied at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
}

/// Mean out-of-fold R² for one grid value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub gamma: f64,
    pub mean_r2: f64,
}

/// Principal directions kept by a PCR fit (standardized covariate space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrProjection {
    /// One unit-norm loading vector per component.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Regression weights on the component scores.
    pub weights: Vec<f64>,
}

/// A fitted per-arm model `f_t(z; θ̂_t)`.
///
/// `intercept` and `coefficients` act on standardized covariates:
/// `η = intercept + Σ_i coefficients[i] · (z[columns[i]] - mean_i) / sd_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedArmModel {
    pub spec: ModelSpec,
    pub link: Link,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Input column used by each coefficient.
    pub columns: Vec<usize>,
    pub standardization: Vec<ColumnScale>,
    /// Requested columns dropped for zero variance.
    pub dropped_columns: Vec<usize>,
    pub input_k: usize,
    pub chosen_gamma: Option<f64>,
    pub cv_scores: Vec<CvScore>,
    pub pcr: Option<PcrProjection>,
    /// The design fell short of full column rank.
    pub rank_deficient: bool,
    /// No usable covariate remained, so the model is the arm mean.
    pub degenerate: bool,
    pub iterations: Option<usize>,
    pub n_obs: usize,
}

impl FittedArmModel {
    fn mean_only(spec: &ModelSpec, arm: &ArmData, dropped: Vec<usize>, degenerate: bool) -> Self {
        FittedArmModel {
            spec: spec.clone(),
            link: Link::Identity,
            intercept: stats::mean(&arm.y),
            coefficients: vec![],
            columns: vec![],
            standardization: vec![],
            dropped_columns: dropped,
            input_k: arm.k,
            chosen_gamma: None,
            cv_scores: vec![],
            pcr: None,
            rank_deficient: false,
            degenerate,
            iterations: None,
            n_obs: arm.len(),
        }
    }

    /// Linear predictor before the inverse link.
    pub fn linear_predictor(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.input_k {
            return Err(Error::InvalidArgument(format!(
                "covariate vector has length {}, model expects {}",
                z.len(),
                self.input_k
            )));
        }
        let mut eta = self.intercept;
        for ((&c, &col), s) in self
            .coefficients
            .iter()
            .zip(&self.columns)
            .zip(&self.standardization)
        {
            eta += c * (z[col] - s.mean) / s.sd;
        }
        Ok(eta)
    }

    /// Prediction for covariate vector `z` (length `K`).
    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        let eta = self.linear_predictor(z)?;
        Ok(match self.link {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        })
    }

    /// Predictions for every row of a row-major block.
    pub fn predict_rows(&self, z: &[f64]) -> Result<Vec<f64>> {
        if self.input_k == 0 {
            return Err(Error::InvalidArgument("model has no input columns".into()));
        }
        z.chunks_exact(self.input_k).map(|r| self.predict(r)).collect()
    }

    /// Intercept and slopes on the original covariate scale, one slope per
    /// input column (zero for unused columns).
    pub fn original_scale(&self) -> (f64, Vec<f64>) {
        let mut slopes = vec![0.0; self.input_k];
        let mut intercept = self.intercept;
        for ((&c, &col), s) in self
            .coefficients
            .iter()
            .zip(&self.columns)
            .zip(&self.standardization)
        {
            slopes[col] += c / s.sd;
            intercept -= c * s.mean / s.sd;
        }
        (intercept, slopes)
    }
}

/// Standardized design for one fit.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    /// Standardized covariates, column-major `n × p`.
    pub x: Mat,
    pub y_mean: f64,
    /// Centered outcome.
    pub r: Vec<f64>,
    pub columns: Vec<usize>,
    pub scales: Vec<ColumnScale>,
    pub dropped: Vec<usize>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn build(arm: &ArmData, requested: &[usize]) -> Design {
        let n = arm.len();
        let mut columns = Vec::new();
        let mut scales = Vec::new();
        let mut dropped = Vec::new();
        let mut data = Vec::new();
        for &col in requested {
            let values: Vec<f64> = (0..n).map(|i| arm.z[i * arm.k + col]).collect();
            let mean = stats::mean(&values);
            let sd = stats::variance(&values, 0).sqrt();
            let negligible = 1e3 * f64::EPSILON * mean.abs();
            if !(sd > negligible) || !sd.is_finite() {
                dropped.push(col);
                continue;
            }
            columns.push(col);
            scales.push(ColumnScale { mean, sd });
            data.push(values.into_iter().map(|v| (v - mean) / sd).collect());
        }
        let y_mean = stats::mean(&arm.y);
        Design {
            x: Mat::from_columns(n, data),
            y_mean,
            r: arm.y.iter().map(|y| y - y_mean).collect(),
            columns,
            scales,
            dropped,
        }
    }

    /// `(Z̃ᵀZ̃/n, Z̃ᵀr/n)`.
    pub fn gram(&self) -> (Mat, Vec<f64>) {
        let n = self.n() as f64;
        (self.x.gram(n), self.x.t_mul_vec(&self.r, n))
    }

    pub fn model(
        &self,
        spec: &ModelSpec,
        arm: &ArmData,
        intercept: f64,
        coefficients: Vec<f64>,
    ) -> FittedArmModel {
        FittedArmModel {
            spec: spec.clone(),
            link: Link::Identity,
            intercept,
            coefficients,
            columns: self.columns.clone(),
            standardization: self.scales.clone(),
            dropped_columns: self.dropped.clone(),
            input_k: arm.k,
            chosen_gamma: None,
            cv_scores: vec![],
            pcr: None,
            rank_deficient: false,
            degenerate: false,
            iterations: None,
            n_obs: arm.len(),
        }
    }
}

/// Fits `spec` on one arm's data.
///
/// `seed` drives the cross-validation fold assignment of penalized kinds.
pub fn fit(spec: &ModelSpec, arm: &ArmData, seed: u64) -> Result<FittedArmModel> {
    spec.validate()?;
    if arm.is_empty() {
        return Err(Error::InsufficientData("cannot fit a model on an empty arm".into()));
    }
    if let ModelKind::TwoStep(_) = spec.kind {
        return Err(Error::InvalidArgument(
            "two_step is an estimator-level kind; use estimator::estimate".into(),
        ));
    }
    if spec.is_dim() {
        return Ok(FittedArmModel::mean_only(spec, arm, vec![], false));
    }
    if matches!(spec.kind, ModelKind::Tweedie) {
        if let Some(i) = arm.y.iter().position(|&y| y < 0.0) {
            return Err(Error::Validation(format!(
                "tweedie requires nonnegative outcomes (unit {i} has {})",
                arm.y[i]
            )));
        }
    }

    let requested = spec.resolve_columns(arm.k, arm.pre_period_col)?;
    let design = Design::build(arm, &requested);
    if design.p() == 0 {
        return Ok(FittedArmModel::mean_only(spec, arm, design.dropped, true));
    }

    match &spec.kind {
        ModelKind::Ols => Ok(fit_ols(spec, arm, &design)),
        ModelKind::Ridge | ModelKind::Lasso | ModelKind::ElasticNet => {
            let cv = cross_validate(spec, arm, seed)?;
            let (g, c) = design.gram();
            let coef = penalized::solve_at(spec, &g, &c, &cv.path_to_chosen())?;
            let mut model = design.model(spec, arm, design.y_mean, coef);
            model.chosen_gamma = Some(cv.chosen_gamma);
            model.cv_scores = cv.scores;
            Ok(model)
        }
        ModelKind::Pcr => fit_pcr(spec, arm, &design),
        ModelKind::Tweedie => tweedie::fit(spec, arm, &design),
        ModelKind::Dim | ModelKind::TwoStep(_) => unreachable!(),
    }
}

fn fit_ols(spec: &ModelSpec, arm: &ArmData, design: &Design) -> FittedArmModel {
    let sol = linalg::lstsq(design.x.clone(), &design.r);
    let mut model = design.model(spec, arm, design.y_mean, sol.x);
    model.rank_deficient = sol.rank < design.p();
    model
}

fn fit_pcr(spec: &ModelSpec, arm: &ArmData, design: &Design) -> Result<FittedArmModel> {
    let (g, c) = design.gram();
    let eig = linalg::symmetric_eigen(&g);
    let top = eig.values[0].max(0.0);
    let usable = eig
        .values
        .iter()
        .take_while(|&&v| v > 1e-12 * top && v > 0.0)
        .count();
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let m = match spec.pcr {
        PcrComponents::Count(m) => m.min(usable),
        PcrComponents::VarianceThreshold(t) => {
            let mut acc = 0.0;
            let mut m = usable;
            for (i, v) in eig.values.iter().take(usable).enumerate() {
                acc += v;
                if acc >= t * total * (1.0 - 1e-12) {
                    m = i + 1;
                    break;
                }
            }
            m
        }
    };
    let p = design.p();
    let mut coef = vec![0.0; p];
    let mut components = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for j in 0..m {
        let v = eig.vectors.col(j);
        // Scores are orthogonal, so OLS on them decouples per component.
        let w = linalg::dot(v, &c) / eig.values[j];
        for (b, vi) in coef.iter_mut().zip(v) {
            *b += w * vi;
        }
        components.push(v.to_vec());
        weights.push(w);
    }
    let mut model = design.model(spec, arm, design.y_mean, coef);
    model.rank_deficient = usable < p;
    model.pcr = Some(PcrProjection {
        components,
        eigenvalues: eig.values[..m].to_vec(),
        weights,
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm_1d(y: &[f64], z: &[f64]) -> ArmData {
        ArmData::new(y.to_vec(), z.to_vec(), 1, 0).unwrap()
    }

    #[test]
    fn dim_is_arm_mean() {
        let arm = arm_1d(&[1.0, 2.0, 3.0], &[5.0, 1.0, 0.0]);
        let m = fit(&ModelSpec::dim(), &arm, 0).unwrap();
        assert_eq!(m.intercept, 2.0);
        assert!(m.coefficients.is_empty());
        assert_eq!(m.predict(&[123.0]).unwrap(), 2.0);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let z: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let y: Vec<f64> = z.iter().map(|v| 3.0 + 2.0 * v).collect();
        let m = fit(&ModelSpec::ols(), &arm_1d(&y, &z), 0).unwrap();
        let (b0, b) = m.original_scale();
        assert!((b0 - 3.0).abs() < 1e-10);
        assert!((b[0] - 2.0).abs() < 1e-10);
        assert!((m.predict(&[5.0]).unwrap() - 13.0).abs() < 1e-10);
    }

    #[test]
    fn predict_checks_length() {
        let m = fit(&ModelSpec::ols(), &arm_1d(&[1.0, 2.0, 4.0], &[0.0, 1.0, 2.0]), 0).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constant_covariates_degenerate_to_dim() {
        let arm = arm_1d(&[1.0, 2.0, 6.0], &[4.0, 4.0, 4.0]);
        for spec in [ModelSpec::ols(), ModelSpec::pcr(PcrComponents::Count(1))] {
            let m = fit(&spec, &arm, 0).unwrap();
            assert!(m.degenerate);
            assert_eq!(m.dropped_columns, vec![0]);
            assert_eq!(m.predict(&[0.0]).unwrap(), 3.0);
        }
    }

    #[test]
    fn empty_arm_is_an_error() {
        let arm = ArmData::new(vec![], vec![], 1, 0).unwrap();
        assert!(matches!(
            fit(&ModelSpec::dim(), &arm, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn collinear_columns_use_minimum_norm() {
        let z = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let arm = ArmData::new(y.to_vec(), z.to_vec(), 2, 0).unwrap();
        let m = fit(&ModelSpec::ols(), &arm, 0).unwrap();
        assert!(m.rank_deficient);
        assert!((m.coefficients[0] - m.coefficients[1]).abs() < 1e-12);
        for (i, yi) in y.iter().enumerate() {
            assert!((m.predict(arm.row(i)).unwrap() - yi).abs() < 1e-10);
        }
    }

    #[test]
    fn column_selection_restricts_inputs() {
        let z = [0.0, 9.0, 1.0, 7.0, 2.0, 1.0, 3.0, 4.0];
        let y = [0.0, 1.0, 2.0, 3.0];
        let arm = ArmData::new(y.to_vec(), z.to_vec(), 2, 0).unwrap();
        let spec: ModelSpec = "ols@pre".parse().unwrap();
        let m = fit(&spec, &arm, 0).unwrap();
        assert_eq!(m.columns, vec![0]);
        let (_, slopes) = m.original_scale();
        assert!((slopes[0] - 1.0).abs() < 1e-12);
        assert_eq!(slopes[1], 0.0);
    }
}
