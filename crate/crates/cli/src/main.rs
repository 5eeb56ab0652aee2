mod aggregate;
mod args;
mod batch;
mod config;
mod output;
mod reports;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::Parser;
use covadj::dataset::{self, ColumnSchema};
use covadj::stress::{timing_profile, write_timing_csv, StressConfig};
use covadj::ExperimentData;
use serde_json::json;

use args::{Cli, Command, CommonArgs};
use config::{FileConfig, Flags, Settings};
use output::Output;

/// Why a run stopped: bad configuration (nothing computed) or a runtime
/// failure.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error, Option<PathBuf>),
}

impl Failure {
    fn emit(&self) -> ExitCode {
        let (kind, err, code) = match self {
            Failure::Config(e) => ("config", e, 2),
            Failure::Runtime(e, _) => ("runtime", e, 1),
        };
        let doc = json!({
            "error": {
                "kind": kind,
                "message": err.to_string(),
                "causes": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            }
        });
        let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
        eprintln!("{text}");
        if let Failure::Runtime(_, Some(dir)) = self {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.emit(),
    }
}

fn config_failure(e: anyhow::Error) -> Failure {
    Failure::Config(e)
}

fn settings(flags: Flags<'_>, common: Option<&CommonArgs>) -> Result<Settings, Failure> {
    let file = match common.and_then(|c| c.config.as_deref()) {
        Some(p) => FileConfig::load(p).map_err(config_failure)?,
        None => FileConfig::default(),
    };
    let s = Settings::resolve(flags, file).map_err(config_failure)?;
    s.check_alpha().map_err(config_failure)?;
    Ok(s)
}

/// Loads a CSV with an explicit or header-inferred schema.
pub(crate) fn load_data(path: &Path, schema: Option<&str>) -> Result<ExperimentData> {
    let schema = match schema {
        Some(text) => ColumnSchema::parse_inline(text)?,
        None => ColumnSchema::infer(&dataset::read_header(path)?)?,
    };
    dataset::load_csv(path, &schema).with_context(|| format!("cannot load {}", path.display()))
}

fn load_input(s: &Settings, truncate: bool) -> Result<(ExperimentData, String)> {
    let path = s.require_input()?;
    let data = load_data(path, s.schema.as_deref())?;
    let data = match (truncate, s.day) {
        (true, Some(d)) => data.truncate_to_day(d)?,
        _ => data,
    };
    Ok((data, path.display().to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Aggregate {
            reports,
            out,
            budgets,
        } => {
            let dir = out
                .clone()
                .or_else(|| std::env::var_os(config::OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT_DIR));
            let budgets = budgets.clone().unwrap_or_else(|| vec![0, 7, 14, 21]);
            let values = aggregate::load_reports(reports).map_err(config_failure)?;
            execute(&dir, "aggregate", 0, &json!({ "reports": reports, "budgets": budgets }), |out| {
                let agg = aggregate::aggregate(&values, &budgets)?;
                out.write_json("aggregate.json", &agg)?;
                out.write_with("aggregate_summary.csv", |b| aggregate::write_summary_csv(&agg, b))?;
                if !agg.budgets.is_empty() {
                    out.write_with("aggregate_budgets.csv", |b| aggregate::write_budget_csv(&agg, b))?;
                }
                Ok(())
            })
        }
        Command::Estimate { common } => {
            let s = settings(Flags { common: Some(common), ..Flags::default() }, Some(common))?;
            s.require_input().map_err(config_failure)?;
            execute(&s.out, "estimate", s.seed, &s, |out| {
                let (data, source) = out.timed("load", || load_input(&s, true))?;
                let rep = out.timed("estimate", || {
                    reports::estimate_report(&data, &source, s.day, &s.model_specs, s.alpha, s.seed)
                });
                out.write_json("estimate.json", &rep)?;
                Ok(())
            })
        }
        Command::Aa { common, aa } => {
            let s = settings(
                Flags { common: Some(common), aa: Some(aa), ..Flags::default() },
                Some(common),
            )?;
            s.require_input().map_err(config_failure)?;
            s.check_aa().map_err(config_failure)?;
            execute(&s.out, "aa", s.seed, &s, |out| {
                let (data, source) = out.timed("load", || load_input(&s, true))?;
                let (rep, run) = out.timed("aa", || {
                    reports::aa_report(
                        &data,
                        &source,
                        s.day,
                        s.aa.arm,
                        &s.model_specs,
                        s.aa.s_splits,
                        s.aa.kappa,
                        s.alpha,
                        s.seed,
                    )
                })?;
                out.write_json("aa.json", &rep)?;
                out.write_with("aa_splits.csv", |b| run.write_split_csv(b))?;
                out.write_with("aa_buckets.csv", |b| reports::write_bucket_csv(&rep.bucket_metrics, b))?;
                Ok(())
            })
        }
        Command::Stress { common, stress } => {
            let s = settings(
                Flags { common: Some(common), stress: Some(stress), ..Flags::default() },
                Some(common),
            )?;
            s.require_input().map_err(config_failure)?;
            let reference = s.check_stress().map_err(config_failure)?;
            execute(&s.out, "stress", s.seed, &s, |out| {
                let (data, source) = out.timed("load", || load_input(&s, true))?;
                let cfg = StressConfig {
                    folds: s.stress.folds.clone(),
                    mc_draws: s.stress.draws,
                    models: s.model_specs.clone(),
                    seed: s.seed,
                    reference_model: reference.clone(),
                    alpha: s.alpha,
                };
                let (doc, rep) = out.timed("stress", || reports::stress_report(&data, &source, s.day, &cfg))?;
                out.write_json("stress.json", &doc)?;
                out.write_with("stress_draws.csv", |b| reports::write_stress_draws(&rep, b))?;
                out.write_with("stress_summary.csv", |b| rep.write_summary_csv(b))?;
                if !s.stress.timing_sizes.is_empty() {
                    let mut folds = vec![0];
                    folds.extend(&s.stress.folds);
                    let rows = out.timed("timing", || {
                        timing_profile(&s.stress.timing_sizes, &folds, &s.model_specs, data.k(), s.seed)
                    })?;
                    out.write_with("stress_timing.csv", |b| write_timing_csv(&rows, b))?;
                }
                Ok(())
            })
        }
        Command::Power { common, power } => {
            let s = settings(
                Flags { common: Some(common), power: Some(power), ..Flags::default() },
                Some(common),
            )?;
            s.require_input().map_err(config_failure)?;
            s.check_power().map_err(config_failure)?;
            let day = s
                .day
                .context("power needs the analysis day; pass --day")
                .map_err(config_failure)?;
            execute(&s.out, "power", s.seed, &s, |out| {
                let (data, source) = out.timed("load", || load_input(&s, false))?;
                let rep = out.timed("power", || {
                    reports::power_report(
                        &data,
                        &source,
                        day,
                        s.power.horizon,
                        &s.model_specs,
                        s.power.delta,
                        s.alpha,
                        s.power.power_target,
                        s.seed,
                    )
                })?;
                out.write_json("power.json", &rep)?;
                Ok(())
            })
        }
        Command::Simulate { common, simulate } => {
            let s = settings(
                Flags { common: Some(common), simulate: Some(simulate), ..Flags::default() },
                Some(common),
            )?;
            s.simulate
                .validate()
                .context("invalid synthetic configuration")
                .map_err(config_failure)?;
            execute(&s.out, "simulate", s.seed, &s, |out| {
                let data = out.timed("generate", || dataset::generate(&s.simulate))?;
                let tmp = out.dir().join(format!(".synthetic.csv.tmp-{}", std::process::id()));
                dataset::write_csv(&data, &tmp)?;
                let bytes = std::fs::read(&tmp)?;
                std::fs::remove_file(&tmp)?;
                out.write_bytes("synthetic.csv", &bytes)?;
                let rep = reports::SimulateReport {
                    kind: "simulate".into(),
                    format_version: reports::FORMAT_VERSION,
                    config: s.simulate.clone(),
                    file: "synthetic.csv".into(),
                    schema: ColumnSchema::for_data(&data).to_inline(),
                    n_units: data.len(),
                    n_per_arm: data.arm_sizes(),
                    last_day: data.day_index().and_then(|d| d.iter().copied().max()),
                };
                out.write_json("simulate.json", &rep)?;
                Ok(())
            })
        }
        Command::Batch {
            common,
            batch,
            aa,
            power,
            simulate,
        } => {
            let s = settings(
                Flags {
                    common: Some(common),
                    aa: Some(aa),
                    power: Some(power),
                    simulate: Some(simulate),
                    batch: Some(batch),
                    ..Flags::default()
                },
                Some(common),
            )?;
            let check = || -> Result<()> {
                for p in &s.batch.inputs {
                    ensure!(p.is_file(), "input file {} does not exist", p.display());
                }
                if s.batch.inputs.is_empty() {
                    ensure!(s.batch.experiments > 0, "batch needs --inputs or --experiments");
                    s.simulate.validate()?;
                }
                ensure!(!s.batch.days.contains(&0), "--days values must be at least 1");
                match s.batch.kind {
                    config::BatchKind::Aa => s.check_aa(),
                    config::BatchKind::Power => s.check_power(),
                    config::BatchKind::Estimate => Ok(()),
                }
            };
            check().map_err(config_failure)?;
            execute(&s.out, "batch", s.seed, &s, |out| batch::run(&s, out))
        }
    }
}

/// Creates the output directory, runs `body`, and writes the manifest.
fn execute<S: serde::Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    settings: &S,
    body: impl FnOnce(&mut Output) -> Result<()>,
) -> Result<(), Failure> {
    let mut out = Output::create(dir).map_err(|e| Failure::Runtime(e, None))?;
    let fail = |e| Failure::Runtime(e, Some(dir.to_path_buf()));
    body(&mut out).map_err(fail)?;
    out.finish(command, seed, settings).map_err(fail)
}
