//! Settings file (TOML with one section per command) merged with CLI flags.
//!
//! Precedence is flag, then file, then built-in default. The output
//! directory additionally falls back to `COVADJ_OUT_DIR` before the default.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use covadj::regression::{parse_model_list, ModelSpec};
use covadj::SyntheticConfig;
use serde::{Deserialize, Serialize};

use crate::args::{AaArgs, BatchArgs, CommonArgs, PowerArgs, SimulateArgs, StressArgs};

pub const OUT_DIR_ENV: &str = "COVADJ_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "covadj-out";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub common: CommonSection,
    pub aa: AaSection,
    pub stress: StressSection,
    pub power: PowerSection,
    pub simulate: SimulateSection,
    pub batch: BatchSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommonSection {
    pub input: Option<PathBuf>,
    pub schema: Option<String>,
    pub models: Option<String>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub day: Option<u32>,
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaSection {
    pub s_splits: Option<usize>,
    pub kappa: Option<usize>,
    pub arm: Option<u8>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressSection {
    pub folds: Option<Vec<usize>>,
    pub draws: Option<usize>,
    pub reference_model: Option<String>,
    pub timing_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub delta: Option<f64>,
    pub power_target: Option<f64>,
    pub horizon: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_units: Option<usize>,
    pub assignment_prob: Option<f64>,
    pub k_covariates: Option<usize>,
    pub outcome_cor: Option<f64>,
    pub true_ate: Option<f64>,
    pub noise_sd: Option<f64>,
    pub daily_arrivals: Option<f64>,
    pub extra_cor: Option<f64>,
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSection {
    pub inputs: Option<Vec<PathBuf>>,
    pub experiments: Option<usize>,
    pub days: Option<Vec<u32>>,
    pub kind: Option<String>,
    pub budgets: Option<Vec<u32>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// Fully resolved settings; echoed into the run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub schema: Option<String>,
    pub models: Vec<String>,
    pub seed: u64,
    pub alpha: f64,
    pub out: PathBuf,
    pub day: Option<u32>,
    pub cv_folds: Option<usize>,
    pub aa: AaSettings,
    pub stress: StressSettings,
    pub power: PowerSettings,
    pub simulate: SyntheticConfig,
    pub batch: BatchSettings,
    #[serde(skip)]
    pub model_specs: Vec<ModelSpec>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AaSettings {
    pub s_splits: usize,
    pub kappa: usize,
    pub arm: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct StressSettings {
    pub folds: Vec<usize>,
    pub draws: usize,
    pub reference_model: String,
    pub timing_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerSettings {
    pub delta: f64,
    pub power_target: f64,
    pub horizon: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    Estimate,
    Aa,
    Power,
}

impl std::str::FromStr for BatchKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "estimate" => BatchKind::Estimate,
            "aa" => BatchKind::Aa,
            "power" => BatchKind::Power,
            other => bail!("unknown batch kind `{other}` (expected estimate, aa or power)"),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSettings {
    pub inputs: Vec<PathBuf>,
    pub experiments: usize,
    pub days: Vec<u32>,
    pub kind: BatchKind,
    pub budgets: Vec<u32>,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Command-specific flag groups; absent groups fall back to file values.
#[derive(Default)]
pub struct Flags<'a> {
    pub common: Option<&'a CommonArgs>,
    pub aa: Option<&'a AaArgs>,
    pub stress: Option<&'a StressArgs>,
    pub power: Option<&'a PowerArgs>,
    pub simulate: Option<&'a SimulateArgs>,
    pub batch: Option<&'a BatchArgs>,
}

impl Settings {
    pub fn resolve(flags: Flags<'_>, file: FileConfig) -> Result<Self> {
        let c = flags.common.cloned().unwrap_or_default();
        let fc = file.common;
        let model_text = pick(c.models, fc.models, "dim,ols".to_string());
        let cv_folds = c.cv_folds.or(fc.cv_folds);
        let mut model_specs =
            parse_model_list(&model_text).with_context(|| format!("bad --models `{model_text}`"))?;
        ensure!(!model_specs.is_empty(), "--models lists no models");
        if let Some(f) = cv_folds {
            ensure!(f >= 2, "--cv-folds must be at least 2");
            model_specs = model_specs.into_iter().map(|m| m.with_cv_folds(f)).collect();
        }
        for m in &model_specs {
            m.validate().with_context(|| format!("invalid model `{m}`"))?;
        }
        let out = c
            .out
            .or(fc.out)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

        let a = flags.aa.cloned().unwrap_or_default();
        let aa = AaSettings {
            s_splits: pick(a.s_splits, file.aa.s_splits, 1000),
            kappa: pick(a.kappa, file.aa.kappa, 20),
            arm: pick(a.arm, file.aa.arm, 0),
        };
        let s = flags.stress.cloned().unwrap_or_default();
        let stress = StressSettings {
            folds: pick(s.folds, file.stress.folds, vec![1, 3, 5]),
            draws: pick(s.draws, file.stress.draws, 100),
            reference_model: pick(s.reference_model, file.stress.reference_model, "ols".into()),
            timing_sizes: pick(s.timing_sizes, file.stress.timing_sizes, vec![]),
        };
        let p = flags.power.cloned().unwrap_or_default();
        let power = PowerSettings {
            delta: pick(p.delta, file.power.delta, 0.01),
            power_target: pick(p.power_target, file.power.power_target, 0.8),
            horizon: p.horizon.or(file.power.horizon),
        };
        let m = flags.simulate.cloned().unwrap_or_default();
        let fs = file.simulate;
        let d = SyntheticConfig::default();
        let seed = pick(c.seed, fc.seed, 0);
        let simulate = SyntheticConfig {
            n_units: pick(m.n_units, fs.n_units, d.n_units),
            assignment_prob: pick(m.assignment_prob, fs.assignment_prob, d.assignment_prob),
            k_covariates: pick(m.k_covariates, fs.k_covariates, d.k_covariates),
            outcome_cor: pick(m.outcome_cor, fs.outcome_cor, d.outcome_cor),
            true_ate: pick(m.true_ate, fs.true_ate, d.true_ate),
            noise_sd: pick(m.noise_sd, fs.noise_sd, d.noise_sd),
            daily_arrivals: m.daily_arrivals.or(fs.daily_arrivals),
            extra_cor: pick(m.extra_cor, fs.extra_cor, d.extra_cor),
            baseline: pick(m.baseline, fs.baseline, d.baseline),
            seed,
        };
        let b = flags.batch.cloned().unwrap_or_default();
        let kind = match b.kind.or(file.batch.kind) {
            Some(k) => k.parse()?,
            None => BatchKind::Estimate,
        };
        let batch = BatchSettings {
            inputs: pick(b.inputs, file.batch.inputs, vec![]),
            experiments: pick(b.experiments, file.batch.experiments, 0),
            days: pick(b.days, file.batch.days, vec![]),
            kind,
            budgets: pick(b.budgets, file.batch.budgets, vec![0, 7, 14, 21]),
        };
        Ok(Settings {
            input: c.input.or(fc.input),
            schema: c.schema.or(fc.schema),
            models: model_specs.iter().map(|m| m.to_string()).collect(),
            seed,
            alpha: pick(c.alpha, fc.alpha, 0.05),
            out,
            day: c.day.or(fc.day),
            cv_folds,
            aa,
            stress,
            power,
            simulate,
            batch,
            model_specs,
        })
    }

    pub fn require_input(&self) -> Result<&Path> {
        let path = self
            .input
            .as_deref()
            .context("no input given; pass --input or set common.input in the config file")?;
        ensure!(path.is_file(), "input file {} does not exist", path.display());
        Ok(path)
    }

    pub fn check_alpha(&self) -> Result<()> {
        ensure!(
            self.alpha > 0.0 && self.alpha < 1.0,
            "--alpha is a significance level in (0,1), got {}",
            self.alpha
        );
        Ok(())
    }

    pub fn check_aa(&self) -> Result<()> {
        ensure!(self.aa.s_splits >= 1, "--s-splits must be at least 1");
        ensure!(
            self.aa.kappa >= 1 && self.aa.kappa <= self.aa.s_splits,
            "--kappa must lie in 1..={} (the number of splits)",
            self.aa.s_splits
        );
        ensure!(self.aa.arm <= 1, "--arm must be 0 or 1");
        Ok(())
    }

    pub fn check_stress(&self) -> Result<ModelSpec> {
        ensure!(
            !self.stress.folds.is_empty() && !self.stress.folds.contains(&0),
            "--folds values must be at least 1"
        );
        ensure!(self.stress.draws >= 1, "--draws must be at least 1");
        let reference: ModelSpec = self
            .stress
            .reference_model
            .parse()
            .with_context(|| format!("bad --reference-model `{}`", self.stress.reference_model))?;
        reference.validate()?;
        Ok(reference)
    }

    pub fn check_power(&self) -> Result<()> {
        ensure!(
            self.power.delta != 0.0 && self.power.delta.is_finite(),
            "--delta must be a nonzero lift"
        );
        ensure!(
            self.power.power_target > 0.0 && self.power.power_target < 1.0,
            "--power-target must lie in (0,1)"
        );
        if let Some(d) = self.day {
            ensure!(d >= 1, "--day must be at least 1");
            if let Some(h) = self.power.horizon {
                ensure!(h > d, "--horizon must exceed --day");
            }
        }
        Ok(())
    }
}
