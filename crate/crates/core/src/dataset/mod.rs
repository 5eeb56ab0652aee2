//! Unit-level experiment records.

mod io;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_csv, read_header, write_csv, ColumnSchema};
pub use synthetic::{generate, SyntheticConfig};

/// One randomized experiment, restricted to a pairwise comparison.
///
/// Covariates are stored row-major: row `n` is `z_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentData {
    unit_ids: Vec<String>,
    assignment: Vec<u8>,
    outcome: Vec<f64>,
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
    k: usize,
    pre_period_col: usize,
    day_index: Option<Vec<u32>>,
}

impl ExperimentData {
    /// Builds and validates a dataset. `covariates` is row-major with
    /// `covariate_names.len()` columns.
    pub fn new(
        unit_ids: Vec<String>,
        assignment: Vec<u8>,
        outcome: Vec<f64>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
        pre_period_col: usize,
        day_index: Option<Vec<u32>>,
    ) -> Result<Self> {
        let data = ExperimentData {
            unit_ids,
            assignment,
            outcome,
            k: covariate_names.len(),
            covariates,
            covariate_names,
            pre_period_col,
            day_index,
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        let n = self.outcome.len();
        if self.unit_ids.len() != n || self.assignment.len() != n {
            return Err(Error::Validation(format!(
                "column lengths differ: {} ids, {} assignments, {} outcomes",
                self.unit_ids.len(),
                self.assignment.len(),
                n
            )));
        }
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 units, got {n}")));
        }
        if self.k == 0 {
            return Err(Error::Validation("at least one covariate is required".into()));
        }
        if self.covariates.len() != n * self.k {
            return Err(Error::Validation(format!(
                "covariate matrix has {} values, expected {n}×{}",
                self.covariates.len(),
                self.k
            )));
        }
        if self.pre_period_col >= self.k {
            return Err(Error::Validation(format!(
                "pre-period column {} out of range for {} covariates",
                self.pre_period_col, self.k
            )));
        }
        for (row, &j) in self.assignment.iter().enumerate() {
            if j > 1 {
                return Err(Error::Validation(format!(
                    "row {}: assignment {j} is not 0 or 1",
                    row + 1
                )));
            }
        }
        for (row, y) in self.outcome.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Validation(format!("row {}: non-finite outcome", row + 1)));
            }
        }
        for (i, z) in self.covariates.iter().enumerate() {
            if !z.is_finite() {
                return Err(Error::Validation(format!(
                    "row {}: non-finite covariate `{}`",
                    i / self.k + 1,
                    self.covariate_names[i % self.k]
                )));
            }
        }
        if let Some(days) = &self.day_index {
            if days.len() != n {
                return Err(Error::Validation("day index length mismatch".into()));
            }
            if let Some(row) = days.iter().position(|&d| d == 0) {
                return Err(Error::Validation(format!("row {}: day index must be ≥ 1", row + 1)));
            }
        }
        for arm in 0..2u8 {
            if !self.assignment.contains(&arm) {
                return Err(Error::Validation(format!("arm {arm} is empty")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    /// Number of covariate columns `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    /// Row-major covariate matrix.
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.covariates[n * self.k..(n + 1) * self.k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.covariates.iter().skip(k).step_by(self.k).copied().collect()
    }

    pub fn pre_period_col(&self) -> usize {
        self.pre_period_col
    }

    /// The designated pre-period KPI `x_n`.
    pub fn pre_period(&self) -> Vec<f64> {
        self.column(self.pre_period_col)
    }

    pub fn day_index(&self) -> Option<&[u32]> {
        self.day_index.as_deref()
    }

    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &j)| (j == arm).then_some(i))
            .collect()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.assignment.iter().filter(|&&j| j == 1).count();
        (self.len() - n1, n1)
    }

    /// Units with `J_n = arm`. The assignment column is kept (all equal), so
    /// the result does not satisfy the two-arm invariant and is only meant
    /// as input to re-randomization.
    pub fn restrict_to_arm(&self, arm: u8) -> Result<ArmSubset> {
        if arm > 1 {
            return Err(Error::Validation(format!("unknown arm {arm}")));
        }
        let idx = self.arm_indices(arm);
        if idx.is_empty() {
            return Err(Error::Validation(format!("arm {arm} is empty")));
        }
        Ok(self.subset_rows(&idx, arm))
    }

    fn subset_rows(&self, idx: &[usize], arm: u8) -> ArmSubset {
        let mut covariates = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            covariates.extend_from_slice(self.row(i));
        }
        ArmSubset {
            arm,
            rows: idx.to_vec(),
            unit_ids: idx.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            covariates,
            covariate_names: self.covariate_names.clone(),
            k: self.k,
            pre_period_col: self.pre_period_col,
        }
    }

    /// Units whose trigger day is `≤ day`. Errors when no day index is
    /// present or when an arm would become empty.
    pub fn truncate_to_day(&self, day: u32) -> Result<ExperimentData> {
        let days = self.day_index.as_ref().ok_or_else(|| {
            Error::Validation("dataset has no day index; supply a day column".into())
        })?;
        let idx: Vec<usize> = (0..self.len()).filter(|&i| days[i] <= day).collect();
        self.select(&idx)
    }

    /// Rows `idx` as a new validated dataset.
    pub fn select(&self, idx: &[usize]) -> Result<ExperimentData> {
        let mut covariates = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            covariates.extend_from_slice(self.row(i));
        }
        ExperimentData::new(
            idx.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            idx.iter().map(|&i| self.assignment[i]).collect(),
            idx.iter().map(|&i| self.outcome[i]).collect(),
            covariates,
            self.covariate_names.clone(),
            self.pre_period_col,
            self.day_index
                .as_ref()
                .map(|d| idx.iter().map(|&i| d[i]).collect()),
        )
    }

    /// Same units with the outcome replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<ExperimentData> {
        let mut d = self.clone();
        d.outcome = outcome;
        d.validate()?;
        Ok(d)
    }

    /// Same units with the assignment replaced.
    pub fn with_assignment(&self, assignment: Vec<u8>) -> Result<ExperimentData> {
        let mut d = self.clone();
        d.assignment = assignment;
        d.validate()?;
        Ok(d)
    }

    /// Same units with a new covariate block.
    pub fn with_covariates(
        &self,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
        pre_period_col: usize,
    ) -> Result<ExperimentData> {
        let mut d = self.clone();
        d.k = covariate_names.len();
        d.covariates = covariates;
        d.covariate_names = covariate_names;
        d.pre_period_col = pre_period_col;
        d.validate()?;
        Ok(d)
    }
}

/// The units of a single arm, as used by the A/A harness.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSubset {
    pub arm: u8,
    /// Row positions in the parent dataset.
    pub rows: Vec<usize>,
    pub unit_ids: Vec<String>,
    pub outcome: Vec<f64>,
    pub covariates: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub k: usize,
    pub pre_period_col: usize,
}

impl ArmSubset {
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    /// All units carry the original arm label.
    pub fn assignment(&self) -> Vec<u8> {
        vec![self.arm; self.len()]
    }

    pub fn pre_period(&self) -> Vec<f64> {
        self.covariates
            .iter()
            .skip(self.pre_period_col)
            .step_by(self.k)
            .copied()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(assignment: Vec<u8>) -> Result<ExperimentData> {
        let n = assignment.len();
        ExperimentData::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            assignment,
            (0..n).map(|i| i as f64).collect(),
            (0..n).map(|i| i as f64 * 2.0).collect(),
            vec!["x".into()],
            0,
            None,
        )
    }

    #[test]
    fn restrict_examples() {
        let d = tiny(vec![0, 0, 1]).unwrap();
        assert_eq!(d.restrict_to_arm(0).unwrap().len(), 2);
        let one = d.restrict_to_arm(1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.outcome, vec![2.0]);
        assert!(matches!(d.restrict_to_arm(2), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_bad_assignment_and_empty_arm() {
        assert!(matches!(tiny(vec![0, 2, 1]), Err(Error::Validation(m)) if m.contains("row 2")));
        assert!(matches!(tiny(vec![0, 0, 0]), Err(Error::Validation(m)) if m.contains("arm 1")));
        assert!(tiny(vec![1]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let r = ExperimentData::new(
            vec!["a".into(), "b".into()],
            vec![0, 1],
            vec![1.0, f64::NAN],
            vec![0.0, 1.0],
            vec!["x".into()],
            0,
            None,
        );
        assert!(r.is_err());
    }

    #[test]
    fn restrictions_partition_rows() {
        let d = tiny(vec![0, 1, 1, 0, 1]).unwrap();
        let mut all: Vec<usize> = d.restrict_to_arm(0).unwrap().rows;
        all.extend(d.restrict_to_arm(1).unwrap().rows);
        all.sort_unstable();
        assert_eq!(all, (0..5).collect::<Vec<_>>());
    }
}
