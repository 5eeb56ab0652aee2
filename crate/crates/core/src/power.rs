//! Experiment-duration recommendation.
//!
//! Arm sizes are extrapolated linearly from the analysis day, per-arm MSEs
//! stay at their analysis-day values, and the first future day with enough
//! power against the hypothesized lift is reported.

use serde::{Deserialize, Serialize};

use crate::dataset::ExperimentData;
use crate::error::{Error, Result};
use crate::estimator::AteEstimate;
use crate::stats;

pub const DEFAULT_TARGET_POWER: f64 = 0.8;
/// Default horizon as a multiple of the analysis day.
pub const DEFAULT_HORIZON_FACTOR: u32 = 10;

/// Linear arm-size forecast anchored at the analysis day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub anchor_day: u32,
    /// `(N₀(D), N₁(D))`.
    pub anchor_sizes: (usize, usize),
    pub horizon: u32,
}

impl Forecast {
    pub fn linear(anchor_day: u32, n0: usize, n1: usize, horizon: u32) -> Result<Self> {
        if anchor_day == 0 {
            return Err(Error::InvalidArgument("analysis day must be at least 1".into()));
        }
        if horizon < anchor_day {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} precedes analysis day {anchor_day}"
            )));
        }
        Ok(Forecast {
            anchor_day,
            anchor_sizes: (n0, n1),
            horizon,
        })
    }

    /// `N̂ₜ(d) = round(Nₜ(D)·d/D)`.
    pub fn at(&self, day: u32) -> (usize, usize) {
        let scale = |n: usize| (n as f64 * day as f64 / self.anchor_day as f64).round() as usize;
        (scale(self.anchor_sizes.0), scale(self.anchor_sizes.1))
    }

    /// `(d, N̂₀(d), N̂₁(d))` for `d` in `(D, horizon]`.
    pub fn days(&self) -> Vec<(u32, usize, usize)> {
        (self.anchor_day + 1..=self.horizon)
            .map(|d| {
                let (a, b) = self.at(d);
                (d, a, b)
            })
            .collect()
    }
}

/// Counts units triggered by `day` in each arm and extrapolates to
/// `horizon` (default `10·day`).
pub fn forecast_arm_sizes(data: &ExperimentData, day: u32, horizon: Option<u32>) -> Result<Forecast> {
    let days = data.day_index().ok_or_else(|| {
        Error::InvalidArgument(
            "dataset has no day index; map a day column in the schema to forecast arm sizes".into(),
        )
    })?;
    let (mut n0, mut n1) = (0usize, 0usize);
    for (&d, &j) in days.iter().zip(data.assignment()) {
        if d <= day {
            if j == 0 { n0 += 1 } else { n1 += 1 }
        }
    }
    Forecast::linear(day, n0, n1, horizon.unwrap_or(day.saturating_mul(DEFAULT_HORIZON_FACTOR)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationRecommendation {
    pub model_id: String,
    #[serde(rename = "D")]
    pub analysis_day: u32,
    /// First day reaching the target power; `None` when not within horizon.
    #[serde(rename = "D_prime")]
    pub day_found: Option<u32>,
    pub delta: f64,
    pub alpha: f64,
    #[serde(rename = "power_target")]
    pub target_power: f64,
    pub horizon: u32,
    pub variance_at_d: f64,
    #[serde(rename = "projected_variance_at_D_prime")]
    pub projected_variance: Option<f64>,
    pub power_at_d_prime: Option<f64>,
}

impl DurationRecommendation {
    /// Whether the target is reached within `budget` extra days.
    pub fn within(&self, budget: u32) -> bool {
        self.day_found
            .is_some_and(|d| d <= self.analysis_day.saturating_add(budget))
    }
}

/// Power of the two-sided z-test at variance `v` against effect `effect`.
pub fn power_at(effect: f64, variance: f64, alpha: f64) -> f64 {
    stats::normal_cdf(effect.abs() / variance.sqrt() - stats::z_critical(alpha))
}

fn check(delta: f64, alpha: f64, target_power: f64) -> Result<()> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::InvalidArgument(
            "delta must be a nonzero lift; power never exceeds alpha at delta = 0".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target power must lie in (0,1), got {target_power}"
        )));
    }
    Ok(())
}

/// Scans days after the anchor for the first one where
/// `Φ(|δ·Ȳ₀|/√V(d) - z_{1-α/2}) ≥ target_power`, with
/// `V(d) = MSE₁/N̂₁(d) + MSE₀/N̂₀(d)`.
pub fn recommend_duration(
    estimate: &AteEstimate,
    forecast: &Forecast,
    delta: f64,
    alpha: f64,
    target_power: f64,
) -> Result<DurationRecommendation> {
    check(delta, alpha, target_power)?;
    let effect = delta * estimate.control_mean.abs();
    if effect == 0.0 {
        return Err(Error::InvalidArgument(
            "control mean is zero, so a relative lift has no absolute effect".into(),
        ));
    }
    let (mse0, mse1) = estimate.mse_per_arm;
    let variance = |n0: usize, n1: usize| mse1 / n1 as f64 + mse0 / n0 as f64;
    let (a0, a1) = forecast.anchor_sizes;
    let mut rec = DurationRecommendation {
        model_id: estimate.model_id.clone(),
        analysis_day: forecast.anchor_day,
        day_found: None,
        delta,
        alpha,
        target_power,
        horizon: forecast.horizon,
        variance_at_d: variance(a0, a1),
        projected_variance: None,
        power_at_d_prime: None,
    };
    for (d, n0, n1) in forecast.days() {
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let v = variance(n0, n1);
        let p = power_at(effect, v, alpha);
        if p >= target_power {
            rec.day_found = Some(d);
            rec.projected_variance = Some(v);
            rec.power_at_d_prime = Some(p);
            break;
        }
    }
    Ok(rec)
}

/// Closed-form inversion ignoring rounding of the forecast sizes:
/// the smallest day `d > D` with `(D/d)·V(D) ≤ (|Δ| / (z_{1-α/2} + z_π))²`.
pub fn closed_form_day(
    variance_at_d: f64,
    anchor_day: u32,
    effect: f64,
    alpha: f64,
    target_power: f64,
) -> u64 {
    let z = stats::z_critical(alpha) + stats::normal_quantile(target_power);
    let needed = anchor_day as f64 * variance_at_d * z * z / (effect * effect);
    (needed.ceil() as u64).max(anchor_day as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(mse: (f64, f64), control_mean: f64) -> AteEstimate {
        AteEstimate {
            model_id: "dim".into(),
            ate: 0.0,
            lift: None,
            lift_ci: None,
            variance: 0.0,
            mse_per_arm: mse,
            ci: (0.0, 0.0),
            alpha: 0.05,
            n_per_arm: (1000, 1000),
            control_mean,
            warnings: vec![],
        }
    }

    #[test]
    fn forecast_is_linear() {
        let f = Forecast::linear(7, 700, 700, 70).unwrap();
        assert_eq!(f.at(14), (1400, 1400));
        assert_eq!(f.at(7), (700, 700));
        assert_eq!(f.days().len(), 63);
    }

    #[test]
    fn worked_example() {
        let f = Forecast::linear(7, 1000, 1000, 2000).unwrap();
        let r = recommend_duration(&est((1.0, 1.0), 1.0), &f, 0.01, 0.05, 0.8).unwrap();
        assert_eq!(r.day_found, Some(1099));
        assert_eq!(closed_form_day(0.002, 7, 0.01, 0.05, 0.8), 1099);
        let short = Forecast::linear(7, 1000, 1000, 70).unwrap();
        let r = recommend_duration(&est((1.0, 1.0), 1.0), &short, 0.01, 0.05, 0.8).unwrap();
        assert_eq!(r.day_found, None);
        let r = recommend_duration(&est((1.0, 1.0), 10.0), &short, 0.01, 0.05, 0.8).unwrap();
        assert_eq!(r.day_found, Some(11));
    }

    #[test]
    fn immediate_and_monotone() {
        let f = Forecast::linear(7, 1000, 1000, 70).unwrap();
        let r = recommend_duration(&est((1.0, 1.0), 10.0), &f, 1.0, 0.05, 0.8).unwrap();
        assert_eq!(r.day_found, Some(8));
        let slow = recommend_duration(&est((2.0, 2.0), 10.0), &f, 0.01, 0.05, 0.8).unwrap();
        let fast = recommend_duration(&est((1.0, 1.0), 10.0), &f, 0.01, 0.05, 0.8).unwrap();
        assert!(fast.day_found.unwrap() <= slow.day_found.unwrap());
    }

    #[test]
    fn zero_delta_rejected() {
        let f = Forecast::linear(7, 10, 10, 70).unwrap();
        assert!(recommend_duration(&est((1.0, 1.0), 1.0), &f, 0.0, 0.05, 0.8).is_err());
    }

    #[test]
    fn missing_day_index_is_reported() {
        let d = ExperimentData::new(
            (0..4).map(|i| i.to_string()).collect(),
            vec![0, 0, 1, 1],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec!["x".into()],
            0,
            None,
        )
        .unwrap();
        let err = forecast_arm_sizes(&d, 7, None).unwrap_err().to_string();
        assert!(err.contains("day"));
    }
}
