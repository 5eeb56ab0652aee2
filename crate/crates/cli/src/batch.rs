use anyhow::{bail, Context, Result};
use covadj::rng::{derive_named, rng_from_seed};
use covadj::{dataset, ExperimentData, SyntheticConfig};
use rand::Rng as _;
use rayon::prelude::*;
use serde_json::Value;

use crate::aggregate::{aggregate, write_budget_csv, write_summary_csv};
use crate::config::{BatchKind, Settings};
use crate::output::Output;
use crate::reports::{aa_report, estimate_report, power_report};
use crate::load_data;

struct Experiment {
    name: String,
    source: String,
    data: ExperimentData,
}

/// Synthetic experiment `e`: sizes vary log-uniformly over `[N/4, 4N]`.
fn synthetic(settings: &Settings, e: usize) -> Result<SyntheticConfig> {
    let base = &settings.simulate;
    let mut rng = rng_from_seed(derive_named(settings.seed, "experiment-size", e as u64));
    let factor = 4f64.powf(rng.random_range(-1.0..=1.0));
    let n = ((base.n_units as f64 * factor).round() as usize).max(8);
    let mut cfg = SyntheticConfig {
        n_units: n,
        seed: derive_named(settings.seed, "experiment", e as u64),
        ..base.clone()
    };
    if cfg.daily_arrivals.is_none() {
        if let Some(&last) = settings.batch.days.iter().max() {
            cfg.daily_arrivals = Some(n as f64 / last as f64);
        }
    }
    Ok(cfg)
}

fn experiments(settings: &Settings) -> Result<Vec<Experiment>> {
    let b = &settings.batch;
    if !b.inputs.is_empty() {
        return b
            .inputs
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("input{i}"));
                Ok(Experiment {
                    name: format!("{i:03}_{stem}"),
                    source: path.display().to_string(),
                    data: load_data(path, settings.schema.as_deref())?,
                })
            })
            .collect();
    }
    if b.experiments == 0 {
        bail!("batch needs --inputs or a positive --experiments count");
    }
    (0..b.experiments)
        .into_par_iter()
        .map(|e| {
            let cfg = synthetic(settings, e)?;
            Ok(Experiment {
                name: format!("exp{e:03}"),
                source: format!("synthetic:{e}"),
                data: dataset::generate(&cfg)?,
            })
        })
        .collect()
}

pub fn run(settings: &Settings, out: &mut Output) -> Result<()> {
    let b = &settings.batch;
    if b.kind == BatchKind::Power && b.days.is_empty() {
        bail!("batch --kind power needs --days");
    }
    let exps = out.timed("load", || experiments(settings))?;
    let days: Vec<Option<u32>> = if b.days.is_empty() {
        vec![None]
    } else {
        b.days.iter().copied().map(Some).collect()
    };
    let items: Vec<(&Experiment, Option<u32>)> = exps
        .iter()
        .flat_map(|e| days.iter().map(move |&d| (e, d)))
        .collect();
    let models = &settings.model_specs;
    let reports: Vec<(String, Value)> = out.timed("analyze", || {
        items
            .par_iter()
            .map(|&(e, day)| -> Result<(String, Value)> {
                let name = match day {
                    Some(d) => format!("{}_day{d}.json", e.name),
                    None => format!("{}.json", e.name),
                };
                let ctx = || format!("experiment {} at day {day:?}", e.source);
                let value = match b.kind {
                    BatchKind::Power => serde_json::to_value(
                        power_report(
                            &e.data,
                            &e.source,
                            day.expect("days checked"),
                            settings.power.horizon,
                            models,
                            settings.power.delta,
                            settings.alpha,
                            settings.power.power_target,
                            settings.seed,
                        )
                        .with_context(ctx)?,
                    )?,
                    kind => {
                        let data = match day {
                            Some(d) => e.data.truncate_to_day(d).with_context(ctx)?,
                            None => e.data.clone(),
                        };
                        if kind == BatchKind::Aa {
                            let (rep, _) = aa_report(
                                &data,
                                &e.source,
                                day,
                                settings.aa.arm,
                                models,
                                settings.aa.s_splits,
                                settings.aa.kappa,
                                settings.alpha,
                                settings.seed,
                            )
                            .with_context(ctx)?;
                            serde_json::to_value(rep)?
                        } else {
                            serde_json::to_value(estimate_report(
                                &data,
                                &e.source,
                                day,
                                models,
                                settings.alpha,
                                settings.seed,
                            ))?
                        }
                    }
                };
                Ok((name, value))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (name, value) in &reports {
        out.write_json(name, value)?;
    }
    let values: Vec<Value> = reports.into_iter().map(|(_, v)| v).collect();
    let agg = aggregate(&values, &b.budgets)?;
    out.write_json("aggregate.json", &agg)?;
    out.write_with("aggregate_summary.csv", |buf| write_summary_csv(&agg, buf))?;
    if !agg.budgets.is_empty() {
        out.write_with("aggregate_budgets.csv", |buf| write_budget_csv(&agg, buf))?;
    }
    Ok(())
}
