//! Cross-experiment summaries of reports of one kind.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use covadj::stats;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::reports::{fmt_opt, AaReport, EstimateReport, PowerReport, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            n: v.len(),
            min: v[0],
            q1: stats::quantile(&v, 0.25),
            median: stats::quantile(&v, 0.5),
            q3: stats::quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDistribution {
    pub model_id: String,
    pub metric: String,
    pub summary: Option<Quartiles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeGroup {
    /// 1 = smallest experiments.
    pub group: usize,
    pub n_experiments: usize,
    pub n_units_range: (usize, usize),
    pub variance_reduction: Vec<ModelDistribution>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketSummary {
    pub model_id: String,
    pub bucket: usize,
    pub metric: String,
    pub summary: Option<Quartiles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetCount {
    pub model_id: String,
    pub budget_days: u32,
    /// Experiments where the model reaches the target within the budget
    /// and DIM does not.
    pub model_only: usize,
    pub n_experiments: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub kind: String,
    pub format_version: u32,
    pub report_kind: String,
    pub n_reports: usize,
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distributions: Vec<ModelDistribution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub size_groups: Vec<SizeGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buckets: Vec<BucketSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub budgets: Vec<BudgetCount>,
}

type BucketMetric = (&'static str, fn(&covadj::aa::ModelBucket) -> Option<f64>);

pub fn load_reports(paths: &[impl AsRef<Path>]) -> Result<Vec<Value>> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read report {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{} is not JSON", p.display()))
        })
        .collect()
}

/// Model ids in first-seen order.
fn model_order<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    ids.filter(|id| seen.insert(id.to_string()))
        .map(str::to_string)
        .collect()
}

pub fn aggregate(reports: &[Value], budgets: &[u32]) -> Result<AggregateReport> {
    ensure!(!reports.is_empty(), "nothing to aggregate");
    let kinds: BTreeSet<&str> = reports
        .iter()
        .map(|r| r.get("kind").and_then(Value::as_str).unwrap_or("?"))
        .collect();
    ensure!(
        kinds.len() == 1,
        "reports mix kinds {kinds:?}; aggregate one kind at a time"
    );
    let kind = kinds.into_iter().next().unwrap().to_string();
    let mut agg = AggregateReport {
        kind: "aggregate".into(),
        format_version: FORMAT_VERSION,
        report_kind: kind.clone(),
        n_reports: reports.len(),
        sources: Vec::new(),
        distributions: Vec::new(),
        size_groups: Vec::new(),
        buckets: Vec::new(),
        budgets: Vec::new(),
    };
    match kind.as_str() {
        "estimate" => {
            let reps: Vec<EstimateReport> = reports
                .iter()
                .map(parse_report)
                .collect::<Result<_, _>>()
                .context("malformed estimate report")?;
            agg.sources = reps.iter().map(source_label).collect();
            aggregate_estimates(&reps, &mut agg);
        }
        "aa" => {
            let reps: Vec<AaReport> = reports
                .iter()
                .map(parse_report)
                .collect::<Result<_, _>>()
                .context("malformed aa report")?;
            agg.sources = reps.iter().map(|r| label(&r.source, r.day)).collect();
            aggregate_aa(&reps, &mut agg)?;
        }
        "power" => {
            let reps: Vec<PowerReport> = reports
                .iter()
                .map(parse_report)
                .collect::<Result<_, _>>()
                .context("malformed power report")?;
            agg.sources = reps.iter().map(|r| label(&r.source, Some(r.day))).collect();
            aggregate_power(&reps, budgets, &mut agg);
        }
        other => bail!("cannot aggregate reports of kind `{other}`"),
    }
    Ok(agg)
}

fn label(source: &str, day: Option<u32>) -> String {
    match day {
        Some(d) => format!("{source}@day{d}"),
        None => source.to_string(),
    }
}

fn parse_report<T: serde::de::DeserializeOwned>(v: &Value) -> serde_json::Result<T> {
    T::deserialize(v)
}

fn source_label(r: &EstimateReport) -> String {
    label(&r.source, r.day)
}

fn vr_distributions(reps: &[&EstimateReport], models: &[String]) -> Vec<ModelDistribution> {
    models
        .iter()
        .map(|id| {
            let vals: Vec<f64> = reps
                .iter()
                .flat_map(|r| r.estimates.iter())
                .filter(|e| &e.estimate.model_id == id)
                .filter_map(|e| e.variance_reduction)
                .collect();
            ModelDistribution {
                model_id: id.clone(),
                metric: "variance_reduction".into(),
                summary: Quartiles::of(&vals),
            }
        })
        .collect()
}

/// Variance-reduction quartiles per model, overall and by sample-size
/// quartile group.
fn aggregate_estimates(reps: &[EstimateReport], agg: &mut AggregateReport) {
    let models = model_order(
        reps.iter()
            .flat_map(|r| r.estimates.iter().map(|e| e.estimate.model_id.as_str())),
    );
    let all: Vec<&EstimateReport> = reps.iter().collect();
    agg.distributions = vr_distributions(&all, &models);

    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by_key(|&i| reps[i].n_units);
    let groups = reps.len().min(4);
    for g in 0..groups {
        let members: Vec<&EstimateReport> = order[g * reps.len() / groups..(g + 1) * reps.len() / groups]
            .iter()
            .map(|&i| &reps[i])
            .collect();
        agg.size_groups.push(SizeGroup {
            group: g + 1,
            n_experiments: members.len(),
            n_units_range: (
                members.first().map_or(0, |r| r.n_units),
                members.last().map_or(0, |r| r.n_units),
            ),
            variance_reduction: vr_distributions(&members, &models),
        });
    }
}

/// Per model and bucket, the distribution across experiments of the
/// relative robustness metrics and coverage.
fn aggregate_aa(reps: &[AaReport], agg: &mut AggregateReport) -> Result<()> {
    let kappa = reps[0].kappa;
    ensure!(
        reps.iter().all(|r| r.kappa == kappa),
        "aa reports use different bucket counts"
    );
    let models = model_order(
        reps.iter()
            .flat_map(|r| r.models.iter().map(|m| m.model_id.as_str())),
    );
    for id in &models {
        for j in 0..kappa {
            let rows: Vec<_> = reps
                .iter()
                .filter_map(|r| r.bucket_metrics.buckets.get(j))
                .filter_map(|b| b.models.iter().find(|m| &m.model_id == id))
                .collect();
            let metrics: [BucketMetric; 4] = [
                ("r_mse", |m| m.r_mse),
                ("r_median_dist", |m| m.r_median_dist),
                ("r_excess_frac", |m| m.r_excess_frac),
                ("coverage", |m| m.coverage),
            ];
            for (name, get) in metrics {
                let vals: Vec<f64> = rows.iter().filter_map(|m| get(m)).collect();
                if name != "coverage" && vals.is_empty() {
                    continue;
                }
                agg.buckets.push(BucketSummary {
                    model_id: id.clone(),
                    bucket: j + 1,
                    metric: name.into(),
                    summary: Quartiles::of(&vals),
                });
            }
        }
    }
    Ok(())
}

/// Duration quartiles, day differences to DIM, and budget counts.
fn aggregate_power(reps: &[PowerReport], budgets: &[u32], agg: &mut AggregateReport) {
    let models = model_order(reps.iter().flat_map(|r| {
        r.recommendations
            .iter()
            .map(|m| m.recommendation.model_id.as_str())
    }));
    let find = |r: &PowerReport, id: &str| {
        r.recommendations
            .iter()
            .find(|m| m.recommendation.model_id == id)
            .map(|m| m.recommendation.clone())
    };
    for id in &models {
        let days: Vec<f64> = reps
            .iter()
            .filter_map(|r| find(r, id).and_then(|m| m.day_found))
            .map(f64::from)
            .collect();
        let deltas: Vec<f64> = reps
            .iter()
            .filter_map(|r| {
                let m = find(r, id)?.day_found?;
                let d = find(r, "dim")?.day_found?;
                Some(f64::from(m) - f64::from(d))
            })
            .collect();
        let vrs: Vec<f64> = reps
            .iter()
            .flat_map(|r| r.recommendations.iter())
            .filter(|m| &m.recommendation.model_id == id)
            .filter_map(|m| m.variance_reduction)
            .collect();
        for (metric, vals) in [("d_prime", days), ("d_prime_minus_dim", deltas), ("variance_reduction", vrs)] {
            agg.distributions.push(ModelDistribution {
                model_id: id.clone(),
                metric: metric.into(),
                summary: Quartiles::of(&vals),
            });
        }
        if id == "dim" {
            continue;
        }
        for &b in budgets {
            let model_only = reps
                .iter()
                .filter(|r| {
                    let m = find(r, id).is_some_and(|m| m.within(b));
                    let d = find(r, "dim").is_some_and(|d| d.within(b));
                    m && !d
                })
                .count();
            agg.budgets.push(BudgetCount {
                model_id: id.clone(),
                budget_days: b,
                model_only,
                n_experiments: reps.len(),
            });
        }
    }
}

/// One tidy CSV: `section,model,group,bucket,metric,n,min,q1,median,q3,max`.
pub fn write_summary_csv(agg: &AggregateReport, out: &mut Vec<u8>) -> covadj::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "section", "model", "group", "bucket", "metric", "n", "min", "q1", "median", "q3", "max",
    ])?;
    let mut row = |section: &str, model: &str, group: &str, bucket: &str, metric: &str, q: &Option<Quartiles>| {
        let (n, cells) = match q {
            Some(q) => (
                q.n.to_string(),
                [q.min, q.q1, q.median, q.q3, q.max].map(|v| fmt_opt(Some(v))),
            ),
            None => ("0".into(), Default::default()),
        };
        let mut rec = vec![section.to_string(), model.into(), group.into(), bucket.into(), metric.into(), n];
        rec.extend(cells);
        w.write_record(rec)
    };
    for d in &agg.distributions {
        row("overall", &d.model_id, "all", "", &d.metric, &d.summary)?;
    }
    for g in &agg.size_groups {
        for d in &g.variance_reduction {
            row("size_group", &d.model_id, &g.group.to_string(), "", &d.metric, &d.summary)?;
        }
    }
    for b in &agg.buckets {
        row("bucket", &b.model_id, "all", &b.bucket.to_string(), &b.metric, &b.summary)?;
    }
    w.flush().map_err(|e| covadj::Error::Io {
        path: "<aggregate csv>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_budget_csv(agg: &AggregateReport, out: &mut Vec<u8>) -> covadj::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "budget_days", "model_only", "n_experiments"])?;
    for b in &agg.budgets {
        w.write_record([
            b.model_id.clone(),
            b.budget_days.to_string(),
            b.model_only.to_string(),
            b.n_experiments.to_string(),
        ])?;
    }
    Ok(())
}
