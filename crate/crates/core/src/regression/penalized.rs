//! Ridge (closed form) and lasso / elastic net (cyclic coordinate descent
//! with covariance updates), both on the standardized Gram system.

use super::{ModelKind, ModelSpec, CD_MAX_SWEEPS, CD_TOLERANCE};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Output of one coordinate-descent solve.
#[derive(Debug, Clone)]
pub struct CdResult {
    pub coef: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep (up to an additive constant).
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `½θᵀGθ - cᵀθ + γ[λ‖θ‖₁ + (1-λ)/2‖θ‖²]`, which equals the penalized
/// least-squares objective minus `‖r‖²/2n`.
pub fn objective(gram: &Mat, c: &[f64], gamma: f64, mix: f64, theta: &[f64]) -> f64 {
    let g_theta = gram.mul_vec(theta);
    let quad = 0.5 * linalg::dot(theta, &g_theta);
    let lin = linalg::dot(c, theta);
    let l1: f64 = theta.iter().map(|t| t.abs()).sum();
    let l2: f64 = theta.iter().map(|t| t * t).sum();
    quad - lin + gamma * (mix * l1 + 0.5 * (1.0 - mix) * l2)
}

/// Cyclic coordinate descent on the Gram system `(G, c)`.
///
/// Stops when the largest coefficient change in a sweep is below `tol` or
/// after `max_sweeps` sweeps.
pub fn coordinate_descent(
    gram: &Mat,
    c: &[f64],
    gamma: f64,
    mix: f64,
    warm: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> CdResult {
    let p = c.len();
    let mut theta = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p]);
    // g_theta = Gθ, kept current through rank-one column updates.
    let mut g_theta = gram.mul_vec(&theta);
    let l1 = gamma * mix;
    let l2 = gamma * (1.0 - mix);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for k in 0..p {
            let gkk = gram[(k, k)];
            let partial = c[k] - g_theta[k] + gkk * theta[k];
            let new = soft_threshold(partial, l1) / (gkk + l2);
            let delta = new - theta[k];
            if delta != 0.0 {
                theta[k] = new;
                for (gt, gk) in g_theta.iter_mut().zip(gram.col(k)) {
                    *gt += delta * gk;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        trace.push(objective(gram, c, gamma, mix, &theta));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    CdResult {
        coef: theta,
        sweeps,
        converged,
        objective_trace: trace,
    }
}

/// Ridge coefficients `(G + γI)⁻¹ c` for each γ, via one eigendecomposition.
pub(crate) fn ridge_path(gram: &Mat, c: &[f64], gammas: &[f64]) -> Vec<Vec<f64>> {
    let eig = linalg::symmetric_eigen(gram);
    let p = c.len();
    let proj: Vec<f64> = (0..p).map(|j| linalg::dot(eig.vectors.col(j), c)).collect();
    gammas
        .iter()
        .map(|&gamma| {
            let mut coef = vec![0.0; p];
            for j in 0..p {
                let w = proj[j] / (eig.values[j].max(0.0) + gamma);
                for (b, v) in coef.iter_mut().zip(eig.vectors.col(j)) {
                    *b += w * v;
                }
            }
            coef
        })
        .collect()
}

/// Coefficients at every γ of a descending path (warm-started for CD).
pub(crate) fn solve_path(
    spec: &ModelSpec,
    gram: &Mat,
    c: &[f64],
    path: &[f64],
) -> Result<Vec<Vec<f64>>> {
    match spec.kind {
        ModelKind::Ridge => Ok(ridge_path(gram, c, path)),
        ModelKind::Lasso | ModelKind::ElasticNet => {
            let mix = spec.l1_share();
            let mut out: Vec<Vec<f64>> = Vec::with_capacity(path.len());
            for &gamma in path {
                let warm = out.last().map(Vec::as_slice);
                let res = coordinate_descent(gram, c, gamma, mix, warm, CD_TOLERANCE, CD_MAX_SWEEPS);
                if !res.converged {
                    return Err(Error::Fit(format!(
                        "{spec}: coordinate descent did not converge in {CD_MAX_SWEEPS} sweeps at γ={gamma}"
                    )));
                }
                out.push(res.coef);
            }
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(format!("{spec} is not a penalized kind"))),
    }
}

/// Coefficients at the last γ of a descending path.
pub(crate) fn solve_at(spec: &ModelSpec, gram: &Mat, c: &[f64], path: &[f64]) -> Result<Vec<f64>> {
    if matches!(spec.kind, ModelKind::Ridge) {
        let last = *path.last().expect("non-empty path");
        return Ok(ridge_path(gram, c, &[last]).pop().unwrap());
    }
    Ok(solve_path(spec, gram, c, path)?.pop().expect("non-empty path"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_system() -> (Mat, Vec<f64>) {
        let mut g = Mat::identity(3);
        g[(0, 1)] = 0.6;
        g[(1, 0)] = 0.6;
        g[(1, 2)] = -0.3;
        g[(2, 1)] = -0.3;
        (g, vec![0.8, -0.2, 0.5])
    }

    #[test]
    fn objective_never_increases() {
        let (g, c) = sample_system();
        for &(gamma, mix) in &[(0.05, 1.0), (0.01, 0.5), (0.2, 0.1), (1e-4, 1.0)] {
            let res = coordinate_descent(&g, &c, gamma, mix, None, 1e-14, 10_000);
            assert!(res.converged);
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{w:?}");
            }
        }
    }

    #[test]
    fn lasso_zero_above_gamma_max() {
        let (g, c) = sample_system();
        let gmax = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res = coordinate_descent(&g, &c, gmax, 1.0, None, 1e-12, 100);
        assert!(res.coef.iter().all(|&b| b == 0.0));
        let res = coordinate_descent(&g, &c, gmax * 0.99, 1.0, None, 1e-12, 1000);
        assert!(res.coef.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn pure_l2_descent_matches_closed_form() {
        let (g, c) = sample_system();
        let cd = coordinate_descent(&g, &c, 0.3, 0.0, None, 1e-14, 10_000);
        let closed = ridge_path(&g, &c, &[0.3]).pop().unwrap();
        for (a, b) in cd.coef.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
    }
}
