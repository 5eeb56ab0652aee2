//! K-fold cross-validation of the penalty strength γ.

use rand::seq::SliceRandom;

use super::{penalized, ArmData, CvScore, Design, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_named, rng_from_seed};

/// Number of points on the default γ grid.
pub const DEFAULT_GRID_POINTS: usize = 50;
/// Ratio between the smallest and largest default γ.
pub const DEFAULT_GRID_RATIO: f64 = 1e-4;

/// Result of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub chosen_gamma: f64,
    /// Mean out-of-fold R² per grid value (empty when the grid has one value).
    pub scores: Vec<CvScore>,
    /// The grid, in descending order.
    pub grid: Vec<f64>,
}

impl CvOutcome {
    /// Descending grid prefix ending at the chosen γ (the warm-start path).
    pub fn path_to_chosen(&self) -> Vec<f64> {
        let mut path: Vec<f64> = self
            .grid
            .iter()
            .copied()
            .take_while(|&g| g > self.chosen_gamma)
            .collect();
        path.push(self.chosen_gamma);
        path
    }
}

/// Smallest γ at which every lasso slope is zero, `max_k |z̃_kᵀ(y - ȳ)| / n`,
/// divided by the L1 share (floored at 1e-3 so ridge gets a finite scale).
pub fn gamma_max(spec: &ModelSpec, arm: &ArmData) -> Result<f64> {
    let cols = spec.resolve_columns(arm.k, arm.pre_period_col)?;
    let design = Design::build(arm, &cols);
    if design.p() == 0 {
        return Ok(0.0);
    }
    let (_, c) = design.gram();
    let max_abs = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let share = spec.l1_share();
    let share = if share.is_nan() { 1.0 } else { share.max(1e-3) };
    Ok(max_abs / share)
}

/// `DEFAULT_GRID_POINTS` log-spaced values from `gmax` down to
/// `DEFAULT_GRID_RATIO · gmax`, descending.
pub fn default_grid(gmax: f64) -> Vec<f64> {
    if !(gmax > 0.0 && gmax.is_finite()) {
        return vec![1.0];
    }
    let steps = (DEFAULT_GRID_POINTS - 1) as f64;
    (0..DEFAULT_GRID_POINTS)
        .map(|i| gmax * DEFAULT_GRID_RATIO.powf(i as f64 / steps))
        .collect()
}

fn descending_grid(spec: &ModelSpec, arm: &ArmData) -> Result<Vec<f64>> {
    let mut grid = match &spec.hyper_grid {
        Some(g) => g.clone(),
        None => default_grid(gamma_max(spec, arm)?),
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    Ok(grid)
}

/// Selects γ by `cv_folds`-fold cross-validation on out-of-fold R².
///
/// Folds come from a seeded permutation and differ in size by at most one.
/// Ties go to the larger γ.
pub fn cross_validate(spec: &ModelSpec, arm: &ArmData, seed: u64) -> Result<CvOutcome> {
    spec.validate()?;
    if !spec.is_penalized() {
        return Err(Error::InvalidArgument(format!(
            "{spec} has no penalty to cross-validate"
        )));
    }
    let grid = descending_grid(spec, arm)?;
    if grid.len() == 1 {
        return Ok(CvOutcome {
            chosen_gamma: grid[0],
            scores: vec![],
            grid,
        });
    }

    let n = arm.len();
    let folds = spec.cv_folds;
    if n < folds {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot be split into {folds} folds; use a smaller fold count"
        )));
    }
    let cols = spec.resolve_columns(arm.k, arm.pre_period_col)?;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(derive_named(seed, "cv-folds", 0)));

    let mut totals = vec![0.0; grid.len()];
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        let test_idx = &perm[lo..hi];
        let train_idx: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
        let train = arm.subset(&train_idx);
        let test = arm.subset(test_idx);
        let design = Design::build(&train, &cols);

        let paths = if design.p() == 0 {
            vec![vec![]; grid.len()]
        } else {
            let (g, c) = design.gram();
            penalized::solve_path(spec, &g, &c, &grid)?
        };

        let test_mean = crate::stats::mean(&test.y);
        let ss_tot: f64 = test.y.iter().map(|y| (y - test_mean).powi(2)).sum();
        for (gi, coef) in paths.iter().enumerate() {
            let ss_res: f64 = (0..test.len())
                .map(|i| {
                    let row = test.row(i);
                    let mut pred = design.y_mean;
                    for ((b, &col), s) in coef.iter().zip(&design.columns).zip(&design.scales) {
                        pred += b * (row[col] - s.mean) / s.sd;
                    }
                    (test.y[i] - pred).powi(2)
                })
                .sum();
            totals[gi] += if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
        }
    }

    let scores: Vec<CvScore> = grid
        .iter()
        .zip(&totals)
        .map(|(&gamma, &t)| CvScore {
            gamma,
            mean_r2: t / folds as f64,
        })
        .collect();
    // Grid is descending, so a strict comparison keeps the larger γ on ties.
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.mean_r2 > scores[best].mean_r2 {
            best = i;
        }
    }
    Ok(CvOutcome {
        chosen_gamma: grid[best],
        scores,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_grid_skips_scoring() {
        let arm = ArmData::new(vec![1.0, 2.0], vec![0.0, 1.0], 1, 0).unwrap();
        let out = cross_validate(&ModelSpec::ridge(vec![3.0]), &arm, 1).unwrap();
        assert_eq!(out.chosen_gamma, 3.0);
        assert!(out.scores.is_empty());
    }

    #[test]
    fn too_few_rows_for_folds() {
        let arm = ArmData::new(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 5.0], 1, 0).unwrap();
        let err = cross_validate(&ModelSpec::ridge(vec![1.0, 2.0]), &arm, 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(m) if m.contains("smaller fold count")));
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid(2.0);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn path_stops_at_chosen() {
        let out = CvOutcome {
            chosen_gamma: 1.0,
            scores: vec![],
            grid: vec![100.0, 10.0, 1.0, 0.1],
        };
        assert_eq!(out.path_to_chosen(), vec![100.0, 10.0, 1.0]);
    }
}
