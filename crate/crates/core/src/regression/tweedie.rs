//! Tweedie GLM with log link, fitted by IRLS at a fixed power `1 < p < 2`.

use super::{ArmData, Design, FittedArmModel, Link, ModelSpec, IRLS_MAX_ITER, IRLS_TOLERANCE};

const IRLS_STEP_TOLERANCE: f64 = 1e-9;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Total Tweedie deviance of `mu` against `y`.
pub fn deviance(y: &[f64], mu: &[f64], power: f64) -> f64 {
    let a = 1.0 - power;
    let b = 2.0 - power;
    y.iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let first = if y > 0.0 { y.powf(b) / (a * b) } else { 0.0 };
            2.0 * (first - y * m.powf(a) / a + m.powf(b) / b)
        })
        .sum()
}

fn linear_predictor(x: &Mat, beta: &[f64]) -> Vec<f64> {
    let mut eta = vec![beta[0]; x.rows()];
    for (j, &b) in beta[1..].iter().enumerate() {
        for (e, v) in eta.iter_mut().zip(x.col(j)) {
            *e += b * v;
        }
    }
    eta
}

pub(super) fn fit(spec: &ModelSpec, arm: &ArmData, design: &Design) -> Result<FittedArmModel> {
    let power = spec.tweedie_power;
    let y = &arm.y;
    let n = y.len();
    let ybar = design.y_mean;
    if !(ybar > 0.0) {
        return Err(Error::Fit(
            "tweedie with log link needs a positive arm mean".into(),
        ));
    }
    let x = &design.x;
    let p = design.p();

    let mut mu: Vec<f64> = y.iter().map(|&v| 0.5 * (v + ybar)).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta: Option<Vec<f64>> = None;
    let mut dev = deviance(y, &mu, power);

    for iter in 1..=IRLS_MAX_ITER {
        let mut cols = Vec::with_capacity(p + 1);
        let sw: Vec<f64> = mu.iter().map(|m| m.powf(1.0 - 0.5 * power)).collect();
        cols.push(sw.clone());
        for j in 0..p {
            cols.push(x.col(j).iter().zip(&sw).map(|(v, s)| v * s).collect());
        }
        let rhs: Vec<f64> = (0..n)
            .map(|i| sw[i] * (eta[i] + (y[i] - mu[i]) / mu[i]))
            .collect();
        let mut candidate = linalg::lstsq(Mat::from_columns(n, cols), &rhs).x;

        let mut new_eta = linear_predictor(x, &candidate);
        let mut new_mu: Vec<f64> = new_eta.iter().map(|e| e.exp()).collect();
        let mut new_dev = deviance(y, &new_mu, power);

        if let Some(prev) = &beta {
            let mut halvings = 0;
            while !(new_dev.is_finite() && new_dev <= dev * (1.0 + 1e-12)) && halvings < 30 {
                for (c, b) in candidate.iter_mut().zip(prev) {
                    *c = 0.5 * (*c + b);
                }
                new_eta = linear_predictor(x, &candidate);
                new_mu = new_eta.iter().map(|e| e.exp()).collect();
                new_dev = deviance(y, &new_mu, power);
                halvings += 1;
            }
        }
        if !new_dev.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iter,
                deviance: dev,
            });
        }

        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        let step = match &beta {
            Some(prev) => candidate
                .iter()
                .zip(prev)
                .map(|(c, b)| (c - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max),
            None => f64::INFINITY,
        };
        beta = Some(candidate);
        eta = new_eta;
        mu = new_mu;
        dev = new_dev;
        if change < IRLS_TOLERANCE && step < IRLS_STEP_TOLERANCE {
            let beta = beta.unwrap();
            let mut model = design.model(spec, arm, beta[0], beta[1..].to_vec());
            model.link = Link::Log;
            model.iterations = Some(iter);
            return Ok(model);
        }
    }
    Err(Error::NonConvergence {
        iterations: IRLS_MAX_ITER,
        deviance: dev,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fit as fit_model;
    use super::*;

    #[test]
    fn zero_linear_predictor_predicts_one() {
        let m = FittedArmModel {
            link: Link::Log,
            intercept: 0.0,
            ..fit_model(&ModelSpec::dim(), &ArmData::new(vec![1.0], vec![0.0], 1, 0).unwrap(), 0)
                .unwrap()
        };
        assert_eq!(m.predict(&[3.0]).unwrap(), 1.0);
    }

    #[test]
    fn recovers_log_linear_mean() {
        // Noiseless y = exp(0.5 + 0.3 z): IRLS reaches the exact solution.
        let z: Vec<f64> = (0..40).map(|i| i as f64 / 10.0 - 2.0).collect();
        let y: Vec<f64> = z.iter().map(|v| (0.5 + 0.3 * v).exp()).collect();
        let arm = ArmData::new(y.clone(), z.clone(), 1, 0).unwrap();
        let m = fit_model(&ModelSpec::tweedie(), &arm, 0).unwrap();
        assert_eq!(m.link, Link::Log);
        let (b0, b) = m.original_scale();
        assert!((b0 - 0.5).abs() < 1e-8, "{b0}");
        assert!((b[0] - 0.3).abs() < 1e-8);
        assert!((m.predict(&[1.0]).unwrap() - 0.8f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn negative_outcomes_rejected() {
        let arm = ArmData::new(vec![1.0, -1.0], vec![0.0, 1.0], 1, 0).unwrap();
        assert!(matches!(
            fit_model(&ModelSpec::tweedie(), &arm, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn all_zero_outcomes_fail() {
        let arm = ArmData::new(vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 2.0], 1, 0).unwrap();
        assert!(matches!(
            fit_model(&ModelSpec::tweedie(), &arm, 0),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn deviance_zero_at_perfect_fit() {
        let y = [0.5, 1.0, 3.0];
        assert!(deviance(&y, &y, 1.5).abs() < 1e-12);
        assert!(deviance(&y, &[1.0, 1.0, 1.0], 1.5) > 0.0);
    }
}
