use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentData;
use crate::error::{Error, Result};

/// Maps CSV columns to their role in an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    #[serde(default)]
    pub unit_id: Option<String>,
    pub assignment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Name of the pre-period KPI column; must be one of `covariates`.
    pub pre_period: String,
    #[serde(default)]
    pub day: Option<String>,
}

impl ColumnSchema {
    /// Parses `key=value` pairs separated by `;`, e.g.
    /// `assignment=arm;outcome=y;covariates=x,z;pre_period=x;day=day`.
    pub fn parse_inline(text: &str) -> Result<Self> {
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("expected key=value, got `{part}`")))?;
            fields.insert(key.trim(), value.trim());
        }
        let take = |key: &str| -> Result<String> {
            fields
                .get(key)
                .map(|v| v.to_string())
                .ok_or_else(|| Error::Schema(format!("schema is missing `{key}`")))
        };
        let covariates: Vec<String> = take("covariates")?
            .split(',')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        let pre_period = match fields.get("pre_period") {
            Some(p) => p.to_string(),
            None => covariates
                .first()
                .cloned()
                .ok_or_else(|| Error::Schema("no covariates listed".into()))?,
        };
        let schema = ColumnSchema {
            unit_id: fields.get("unit_id").map(|s| s.to_string()),
            assignment: take("assignment")?,
            outcome: take("outcome")?,
            covariates,
            pre_period,
            day: fields.get("day").map(|s| s.to_string()),
        };
        schema.check()?;
        Ok(schema)
    }

    /// The schema `write_csv` produces for `data`.
    pub fn for_data(data: &ExperimentData) -> Self {
        ColumnSchema {
            unit_id: Some("unit_id".into()),
            assignment: "assignment".into(),
            outcome: "outcome".into(),
            covariates: data.covariate_names().to_vec(),
            pre_period: data.covariate_names()[data.pre_period_col()].clone(),
            day: data.day_index().map(|_| "day".into()),
        }
    }

    /// Default roles for a header: `assignment`, `outcome`, optional
    /// `unit_id` and `day`, every other column a covariate. The pre-period
    /// column is `x` when present, else the first covariate.
    pub fn infer(header: &[String]) -> Result<Self> {
        let has = |name: &str| header.iter().any(|h| h == name);
        for required in ["assignment", "outcome"] {
            if !has(required) {
                return Err(Error::Schema(format!(
                    "no schema given and the header lacks a `{required}` column"
                )));
            }
        }
        let covariates: Vec<String> = header
            .iter()
            .filter(|h| !matches!(h.as_str(), "assignment" | "outcome" | "unit_id" | "day"))
            .cloned()
            .collect();
        let pre_period = if has("x") {
            "x".to_string()
        } else {
            covariates
                .first()
                .cloned()
                .ok_or_else(|| Error::Schema("the header has no covariate columns".into()))?
        };
        let schema = ColumnSchema {
            unit_id: has("unit_id").then(|| "unit_id".to_string()),
            assignment: "assignment".into(),
            outcome: "outcome".into(),
            covariates,
            pre_period,
            day: has("day").then(|| "day".to_string()),
        };
        schema.check()?;
        Ok(schema)
    }

    /// Inverse of [`ColumnSchema::parse_inline`].
    pub fn to_inline(&self) -> String {
        let mut parts = Vec::new();
        if let Some(u) = &self.unit_id {
            parts.push(format!("unit_id={u}"));
        }
        parts.push(format!("assignment={}", self.assignment));
        parts.push(format!("outcome={}", self.outcome));
        parts.push(format!("covariates={}", self.covariates.join(",")));
        parts.push(format!("pre_period={}", self.pre_period));
        if let Some(d) = &self.day {
            parts.push(format!("day={d}"));
        }
        parts.join(";")
    }

    pub fn check(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Schema("at least one covariate column is required".into()));
        }
        if !self.covariates.contains(&self.pre_period) {
            return Err(Error::Schema(format!(
                "pre-period column `{}` is not among the covariates",
                self.pre_period
            )));
        }
        Ok(())
    }

    fn pre_period_index(&self) -> usize {
        self.covariates
            .iter()
            .position(|c| c == &self.pre_period)
            .expect("checked")
    }
}

/// Column names from the first line of a CSV file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    Ok(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads and validates an experiment from a headered, comma-delimited CSV.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<ExperimentData> {
    let path = path.as_ref();
    schema.check()?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {}", path.display())))
    };
    let id_col = schema.unit_id.as_deref().map(find).transpose()?;
    let assign_col = find(&schema.assignment)?;
    let outcome_col = find(&schema.outcome)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let day_col = schema.day.as_deref().map(find).transpose()?;

    let mut unit_ids = Vec::new();
    let mut assignment = Vec::new();
    let mut outcome = Vec::new();
    let mut covariates = Vec::new();
    let mut days = day_col.map(|_| Vec::new());

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("").trim();
        let number = |col: usize| -> Result<f64> {
            let raw = field(col);
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: headers[col].to_string(),
                message: format!("cannot parse `{raw}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "row {row}: non-finite value in column `{}`",
                    &headers[col]
                )));
            }
            Ok(v)
        };

        let raw_arm = field(assign_col);
        let arm = match raw_arm {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                let as_num: Option<f64> = other.parse().ok();
                match as_num {
                    Some(0.0) => 0,
                    Some(1.0) => 1,
                    Some(_) => {
                        return Err(Error::Validation(format!(
                            "row {row}: assignment `{other}` is not 0 or 1"
                        )))
                    }
                    None => {
                        return Err(Error::Parse {
                            row,
                            column: schema.assignment.clone(),
                            message: format!("cannot parse `{other}` as an arm label"),
                        })
                    }
                }
            }
        };
        assignment.push(arm);
        outcome.push(number(outcome_col)?);
        for &c in &cov_cols {
            covariates.push(number(c)?);
        }
        unit_ids.push(match id_col {
            Some(c) => field(c).to_string(),
            None => row.to_string(),
        });
        if let (Some(c), Some(d)) = (day_col, days.as_mut()) {
            let raw = field(c);
            let day: u32 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("cannot parse `{raw}` as a day number"),
            })?;
            d.push(day);
        }
    }

    ExperimentData::new(
        unit_ids,
        assignment,
        outcome,
        covariates,
        schema.covariates.clone(),
        schema.pre_period_index(),
        days,
    )
}

/// Writes `data` in the layout described by [`ColumnSchema::for_data`].
/// Floats use Rust's shortest round-trip formatting, so
/// `load_csv(write_csv(d)) == d`.
pub fn write_csv(data: &ExperimentData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["unit_id".to_string(), "assignment".into(), "outcome".into()];
    header.extend(data.covariate_names().iter().cloned());
    if data.day_index().is_some() {
        header.push("day".into());
    }
    w.write_record(&header)?;
    for n in 0..data.len() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(data.unit_ids()[n].clone());
        rec.push(data.assignment()[n].to_string());
        rec.push(format!("{:?}", data.outcome()[n]));
        rec.extend(data.row(n).iter().map(|v| format!("{v:?}")));
        if let Some(days) = data.day_index() {
            rec.push(days[n].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema() -> ColumnSchema {
        ColumnSchema::parse_inline("assignment=arm; outcome=y; covariates=x,w; pre_period=x").unwrap()
    }

    #[test]
    fn loads_minimal_file() {
        let f = write("arm,y,x,w\n0,1.0,0.5,2\n0,2.0,0.1,3\n1,3.5,0.2,1\n1,4.0,0.9,0\n");
        let d = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.k(), 2);
        assert_eq!(d.pre_period(), vec![0.5, 0.1, 0.2, 0.9]);
    }

    #[test]
    fn assignment_two_is_rejected_with_row() {
        let f = write("arm,y,x,w\n0,1,0,0\n2,1,0,0\n1,1,0,0\n");
        let err = load_csv(f.path(), &schema()).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("row 2")), "{err}");
    }

    #[test]
    fn single_arm_file_is_rejected() {
        let f = write("arm,y,x,w\n0,1,0,0\n0,2,0,0\n");
        let err = load_csv(f.path(), &schema()).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("empty")), "{err}");
    }

    #[test]
    fn missing_column_and_bad_number() {
        let f = write("arm,y,x\n0,1,0\n1,1,0\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Schema(_))));
        let f = write("arm,y,x,w\n0,1,0,0\n1,abc,0,0\n");
        let err = load_csv(f.path(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
        let f = write("arm,y,x,w\n0,1,,0\n1,1,0,0\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Parse { row: 1, .. })));
        let f = write("arm,y,x,w\n0,inf,0,0\n1,1,0,0\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Validation(_))));
    }

    #[test]
    fn schema_requires_pre_period_among_covariates() {
        assert!(ColumnSchema::parse_inline("assignment=a;outcome=y;covariates=x;pre_period=q").is_err());
        assert!(ColumnSchema::parse_inline("outcome=y;covariates=x").is_err());
    }

    #[test]
    fn inferred_schema_round_trips_inline() {
        let header: Vec<String> = ["unit_id", "assignment", "outcome", "w", "x", "day"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let schema = ColumnSchema::infer(&header).unwrap();
        assert_eq!(schema.covariates, vec!["w", "x"]);
        assert_eq!(schema.pre_period, "x");
        assert_eq!(ColumnSchema::parse_inline(&schema.to_inline()).unwrap(), schema);
        assert!(ColumnSchema::infer(&header[2..]).is_err());
    }
}
