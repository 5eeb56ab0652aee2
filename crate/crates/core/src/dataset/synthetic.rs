use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ExperimentData;
use crate::error::{Error, Result};
use crate::rng::{derive_named, rng_from_seed};

/// Parameters of the synthetic A/B experiment generator.
///
/// `x ~ N(0,1)` is the pre-period KPI (covariate 0), the other `K-1`
/// covariates are standard normal with correlation `extra_cor` to `x`, and
///
/// ```text
/// Y = baseline + ρ·x + √(1-ρ²)·σ·ε + τ·J,   J ~ Bernoulli(π)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_units: usize,
    pub assignment_prob: f64,
    pub k_covariates: usize,
    pub outcome_cor: f64,
    pub true_ate: f64,
    pub noise_sd: f64,
    /// Expected arrivals per day; `None` leaves the day index empty.
    pub daily_arrivals: Option<f64>,
    #[serde(default)]
    pub extra_cor: f64,
    #[serde(default)]
    pub baseline: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_units: 1000,
            assignment_prob: 0.5,
            k_covariates: 1,
            outcome_cor: 0.0,
            true_ate: 0.0,
            noise_sd: 1.0,
            daily_arrivals: None,
            extra_cor: 0.0,
            baseline: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_units < 2 {
            return fail(format!("n_units must be ≥ 2, got {}", self.n_units));
        }
        if !(self.assignment_prob > 0.0 && self.assignment_prob < 1.0) {
            return fail(format!("assignment_prob must lie in (0,1), got {}", self.assignment_prob));
        }
        if self.k_covariates == 0 {
            return fail("k_covariates must be ≥ 1".into());
        }
        if !(self.outcome_cor.abs() <= 1.0) {
            return fail(format!("outcome_cor must lie in [-1,1], got {}", self.outcome_cor));
        }
        if !(self.extra_cor.abs() <= 1.0) {
            return fail(format!("extra_cor must lie in [-1,1], got {}", self.extra_cor));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return fail(format!("noise_sd must be > 0, got {}", self.noise_sd));
        }
        if !self.true_ate.is_finite() || !self.baseline.is_finite() {
            return fail("true_ate and baseline must be finite".into());
        }
        if let Some(rate) = self.daily_arrivals {
            if !(rate > 0.0 && rate.is_finite()) {
                return fail(format!("daily_arrivals must be > 0, got {rate}"));
            }
        }
        Ok(())
    }
}

/// Draws a synthetic experiment. A pure function of `config`.
pub fn generate(config: &SyntheticConfig) -> Result<ExperimentData> {
    config.validate()?;
    let n = config.n_units;
    let k = config.k_covariates;
    let rho = config.outcome_cor;
    let resid_scale = (1.0 - rho * rho).sqrt() * config.noise_sd;
    let c = config.extra_cor;
    let c_perp = (1.0 - c * c).sqrt();

    let mut rng = rng_from_seed(derive_named(config.seed, "units", 0));
    let mut assignment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut covariates = Vec::with_capacity(n * k);

    // Retry the (astronomically unlikely) single-arm draw with a fresh stream.
    let mut attempt = 0;
    loop {
        assignment.clear();
        outcome.clear();
        covariates.clear();
        for _ in 0..n {
            let j = u8::from(rng.random::<f64>() < config.assignment_prob);
            let x: f64 = StandardNormal.sample(&mut rng);
            covariates.push(x);
            for _ in 1..k {
                let e: f64 = StandardNormal.sample(&mut rng);
                covariates.push(c * x + c_perp * e);
            }
            let eps: f64 = StandardNormal.sample(&mut rng);
            outcome.push(config.baseline + rho * x + resid_scale * eps + config.true_ate * j as f64);
            assignment.push(j);
        }
        if assignment.contains(&0) && assignment.contains(&1) {
            break;
        }
        attempt += 1;
        if attempt > 16 {
            return Err(Error::Validation(
                "could not draw both arms; increase n_units or move assignment_prob toward 0.5"
                    .into(),
            ));
        }
        rng = rng_from_seed(derive_named(config.seed, "units", attempt));
    }

    let day_index = match config.daily_arrivals {
        Some(rate) => Some(poisson_days(n, rate, config.seed)?),
        None => None,
    };

    let names = (0..k)
        .map(|i| if i == 0 { "x".to_string() } else { format!("z{i}") })
        .collect();
    ExperimentData::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        assignment,
        outcome,
        covariates,
        names,
        0,
        day_index,
    )
}

/// Cumulative Poisson arrivals: day `d` receives `Poisson(rate)` new units,
/// assigned in unit order.
fn poisson_days(n: usize, rate: f64, seed: u64) -> Result<Vec<u32>> {
    let mut rng = rng_from_seed(derive_named(seed, "arrivals", 0));
    let poisson = Poisson::new(rate).map_err(|e| Error::Validation(e.to_string()))?;
    let mut days = Vec::with_capacity(n);
    let mut day: u32 = 0;
    while days.len() < n {
        day += 1;
        let arrivals = poisson.sample(&mut rng) as usize;
        let take = arrivals.min(n - days.len());
        days.extend(std::iter::repeat_n(day, take));
    }
    Ok(days)
}
