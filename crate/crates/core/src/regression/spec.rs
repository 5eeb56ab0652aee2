use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default number of cross-validation folds.
pub const DEFAULT_CV_FOLDS: usize = 5;
/// Default fixed Tweedie power.
pub const DEFAULT_TWEEDIE_POWER: f64 = 1.5;
/// Default fraction of standardized-covariate variance the PCR components keep.
pub const DEFAULT_PCR_VARIANCE: f64 = 0.9;

/// Regression family used for the per-arm outcome models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// Arm mean, ignores covariates.
    Dim,
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
    Pcr,
    Tweedie,
    /// Base estimator whose cross-arm predictions feed a second, linear one.
    TwoStep(Box<ModelSpec>),
}

/// Which covariate columns a model may use.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ColumnSelection {
    #[default]
    All,
    /// Only the designated pre-period KPI column.
    PrePeriod,
    Indices(Vec<usize>),
}

/// How many principal components PCR keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcrComponents {
    Count(usize),
    /// Smallest number of components whose share of variance reaches the threshold.
    VarianceThreshold(f64),
}

/// Declarative choice of regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Candidate penalty strengths. `None` selects the default log-spaced grid.
    pub hyper_grid: Option<Vec<f64>>,
    /// Elastic-net L1 share λ ∈ [0,1]; required for `elastic_net`.
    pub mix: Option<f64>,
    pub pcr: PcrComponents,
    pub tweedie_power: f64,
    pub cv_folds: usize,
    pub columns: ColumnSelection,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hyper_grid: None,
            mix: None,
            pcr: PcrComponents::VarianceThreshold(DEFAULT_PCR_VARIANCE),
            tweedie_power: DEFAULT_TWEEDIE_POWER,
            cv_folds: DEFAULT_CV_FOLDS,
            columns: ColumnSelection::All,
        }
    }

    pub fn dim() -> Self {
        Self::new(ModelKind::Dim)
    }

    pub fn ols() -> Self {
        Self::new(ModelKind::Ols)
    }

    pub fn ridge(grid: Vec<f64>) -> Self {
        Self::new(ModelKind::Ridge).with_grid(grid)
    }

    pub fn lasso(grid: Vec<f64>) -> Self {
        Self::new(ModelKind::Lasso).with_grid(grid)
    }

    pub fn elastic_net(mix: f64, grid: Vec<f64>) -> Self {
        let mut s = Self::new(ModelKind::ElasticNet).with_grid(grid);
        s.mix = Some(mix);
        s
    }

    pub fn pcr(components: PcrComponents) -> Self {
        let mut s = Self::new(ModelKind::Pcr);
        s.pcr = components;
        s
    }

    pub fn tweedie() -> Self {
        Self::new(ModelKind::Tweedie)
    }

    pub fn two_step(base: ModelSpec) -> Self {
        Self::new(ModelKind::TwoStep(Box::new(base)))
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.hyper_grid = Some(grid);
        self
    }

    pub fn with_columns(mut self, columns: ColumnSelection) -> Self {
        self.columns = columns;
        self
    }

    pub fn with_cv_folds(mut self, folds: usize) -> Self {
        self.cv_folds = folds;
        self
    }

    pub fn is_penalized(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::Ridge | ModelKind::Lasso | ModelKind::ElasticNet
        )
    }

    pub fn is_dim(&self) -> bool {
        matches!(self.kind, ModelKind::Dim)
    }

    /// L1 share of the penalty: 0 for ridge, 1 for lasso.
    pub fn l1_share(&self) -> f64 {
        match self.kind {
            ModelKind::Ridge => 0.0,
            ModelKind::Lasso => 1.0,
            ModelKind::ElasticNet => self.mix.unwrap_or(f64::NAN),
            _ => f64::NAN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if let Some(grid) = &self.hyper_grid {
            if grid.is_empty() {
                return bad(format!("{self}: hyper_grid is empty"));
            }
            if grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return bad(format!("{self}: hyper_grid values must be finite and > 0"));
            }
        }
        if self.cv_folds < 2 {
            return bad(format!("{self}: cv_folds must be ≥ 2"));
        }
        match &self.kind {
            ModelKind::ElasticNet => match self.mix {
                None => return bad("elastic_net requires an explicit mix (λ) parameter".into()),
                Some(m) if !(0.0..=1.0).contains(&m) => {
                    return bad(format!("elastic_net mix must lie in [0,1], got {m}"))
                }
                _ => {}
            },
            ModelKind::Pcr => match self.pcr {
                PcrComponents::Count(0) => return bad("pcr needs at least one component".into()),
                PcrComponents::VarianceThreshold(t) if !(t > 0.0 && t <= 1.0) => {
                    return bad(format!("pcr variance threshold must lie in (0,1], got {t}"))
                }
                _ => {}
            },
            ModelKind::Tweedie => {
                if !(self.tweedie_power > 1.0 && self.tweedie_power < 2.0) {
                    return bad(format!(
                        "tweedie power must lie in (1,2), got {}",
                        self.tweedie_power
                    ));
                }
            }
            ModelKind::TwoStep(base) => {
                if matches!(base.kind, ModelKind::TwoStep(_)) {
                    return bad("two_step cannot be nested".into());
                }
                base.validate()?;
            }
            _ => {}
        }
        if let ColumnSelection::Indices(ix) = &self.columns {
            if ix.is_empty() {
                return bad(format!("{self}: empty column selection"));
            }
        }
        Ok(())
    }

    /// Resolves the column selection against a design with `k` covariates.
    pub fn resolve_columns(&self, k: usize, pre_period_col: usize) -> Result<Vec<usize>> {
        match &self.columns {
            ColumnSelection::All => Ok((0..k).collect()),
            ColumnSelection::PrePeriod => {
                if pre_period_col >= k {
                    return Err(Error::InvalidArgument(format!(
                        "pre-period column {pre_period_col} out of range for {k} covariates"
                    )));
                }
                Ok(vec![pre_period_col])
            }
            ColumnSelection::Indices(ix) => {
                if let Some(bad) = ix.iter().find(|&&i| i >= k) {
                    return Err(Error::InvalidArgument(format!(
                        "column {bad} out of range for {k} covariates"
                    )));
                }
                Ok(ix.clone())
            }
        }
    }

    fn base_name(&self) -> String {
        match &self.kind {
            ModelKind::Dim => "dim".into(),
            ModelKind::Ols => "ols".into(),
            ModelKind::Ridge => "ridge".into(),
            ModelKind::Lasso => "lasso".into(),
            ModelKind::ElasticNet => "elastic_net".into(),
            ModelKind::Pcr => "pcr".into(),
            ModelKind::Tweedie => "tweedie".into(),
            ModelKind::TwoStep(base) => format!("two_step:{base}"),
        }
    }
}

/// Canonical name: `kind[(key=value,...)][@columns]`, e.g. `ols@pre`,
/// `elastic_net(mix=0.5)`, `ridge(grid=0.01|100)`, `two_step:lasso`.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.base_name())?;
        if matches!(self.kind, ModelKind::TwoStep(_)) {
            return Ok(());
        }
        let mut params = Vec::new();
        if let Some(m) = self.mix {
            if matches!(self.kind, ModelKind::ElasticNet) {
                params.push(format!("mix={m}"));
            }
        }
        if let Some(grid) = &self.hyper_grid {
            if self.is_penalized() {
                let g: Vec<String> = grid.iter().map(|g| format!("{g:e}")).collect();
                params.push(format!("grid={}", g.join("|")));
            }
        }
        if matches!(self.kind, ModelKind::Pcr) {
            match self.pcr {
                PcrComponents::Count(n) => params.push(format!("components={n}")),
                PcrComponents::VarianceThreshold(t) if t != DEFAULT_PCR_VARIANCE => {
                    params.push(format!("variance={t}"))
                }
                _ => {}
            }
        }
        if matches!(self.kind, ModelKind::Tweedie) && self.tweedie_power != DEFAULT_TWEEDIE_POWER {
            params.push(format!("power={}", self.tweedie_power));
        }
        if self.cv_folds != DEFAULT_CV_FOLDS && self.is_penalized() {
            params.push(format!("folds={}", self.cv_folds));
        }
        if !params.is_empty() {
            write!(f, "({})", params.join(","))?;
        }
        match &self.columns {
            ColumnSelection::All => Ok(()),
            ColumnSelection::PrePeriod => write!(f, "@pre"),
            ColumnSelection::Indices(ix) => {
                let s: Vec<String> = ix.iter().map(|i| i.to_string()).collect();
                write!(f, "@{}", s.join("|"))
            }
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let err = |m: String| Error::InvalidArgument(format!("model `{text}`: {m}"));
        if let Some(base) = text.strip_prefix("two_step:") {
            let spec = ModelSpec::two_step(base.parse()?);
            spec.validate()?;
            return Ok(spec);
        }

        let (head, columns) = match text.rsplit_once('@') {
            Some((h, c)) if !c.contains(')') => (h, Some(c)),
            _ => (text, None),
        };
        let (name, params) = match head.split_once('(') {
            Some((n, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| err("unbalanced parentheses".into()))?;
                (n.trim(), Some(inner))
            }
            None => (head.trim(), None),
        };
        let kind = match name {
            "dim" => ModelKind::Dim,
            "ols" | "lr" => ModelKind::Ols,
            "ridge" => ModelKind::Ridge,
            "lasso" => ModelKind::Lasso,
            "elastic_net" => ModelKind::ElasticNet,
            "pcr" => ModelKind::Pcr,
            "tweedie" => ModelKind::Tweedie,
            "lr1" => {
                let spec = ModelSpec::ols().with_columns(ColumnSelection::PrePeriod);
                if params.is_some() || columns.is_some() {
                    return Err(err("lr1 takes no parameters".into()));
                }
                return Ok(spec);
            }
            other => return Err(err(format!("unknown kind `{other}`"))),
        };
        let mut spec = ModelSpec::new(kind);

        for pair in params
            .into_iter()
            .flat_map(|p| p.split(','))
            .map(str::trim)
            .filter(|p| !p.is_empty())
        {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{pair}`")))?;
            let num = |v: &str| -> Result<f64> {
                v.trim()
                    .parse()
                    .map_err(|_| err(format!("`{v}` is not a number")))
            };
            match key.trim() {
                "mix" => spec.mix = Some(num(value)?),
                "grid" | "gamma" => {
                    spec.hyper_grid = Some(value.split('|').map(num).collect::<Result<_>>()?)
                }
                "components" => spec.pcr = PcrComponents::Count(num(value)? as usize),
                "variance" => spec.pcr = PcrComponents::VarianceThreshold(num(value)?),
                "power" => spec.tweedie_power = num(value)?,
                "folds" => spec.cv_folds = num(value)? as usize,
                other => return Err(err(format!("unknown parameter `{other}`"))),
            }
        }

        if let Some(cols) = columns {
            spec.columns = match cols.trim() {
                "pre" => ColumnSelection::PrePeriod,
                list => ColumnSelection::Indices(
                    list.split('|')
                        .map(|c| {
                            c.trim()
                                .parse::<usize>()
                                .map_err(|_| err(format!("bad column index `{c}`")))
                        })
                        .collect::<Result<_>>()?,
                ),
            };
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Splits a comma-separated model list, ignoring commas inside parentheses.
pub fn parse_model_list(text: &str) -> Result<Vec<ModelSpec>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.parse()?);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty model list".into()));
    }
    Ok(out)
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_names_round_trip() {
        for name in [
            "dim",
            "ols",
            "ridge",
            "lasso",
            "elastic_net(mix=0.5)",
            "pcr",
            "pcr(components=3)",
            "tweedie",
            "two_step:ols",
            "two_step:lasso",
            "ols@pre",
            "ols@0|2",
            "ridge(grid=1e-2|1e2)",
        ] {
            let spec: ModelSpec = name.parse().unwrap();
            let again: ModelSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again, "{name}");
        }
        assert_eq!("lr1".parse::<ModelSpec>().unwrap().to_string(), "ols@pre");
        assert_eq!("ols".parse::<ModelSpec>().unwrap().to_string(), "ols");
    }

    #[test]
    fn invalid_specs() {
        assert!("elastic_net".parse::<ModelSpec>().is_err());
        assert!("elastic_net(mix=1.5)".parse::<ModelSpec>().is_err());
        assert!("ridge(grid=0|1)".parse::<ModelSpec>().is_err());
        assert!("pcr(components=0)".parse::<ModelSpec>().is_err());
        assert!("tweedie(power=2)".parse::<ModelSpec>().is_err());
        assert!("two_step:two_step:ols".parse::<ModelSpec>().is_err());
        assert!("nope".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn model_lists_respect_parentheses() {
        let list = parse_model_list("dim, ols, elastic_net(mix=0.5,grid=1|2), lr1").unwrap();
        assert_eq!(list.len(), 4);
        assert_eq!(list[2].hyper_grid, Some(vec![1.0, 2.0]));
    }
}
