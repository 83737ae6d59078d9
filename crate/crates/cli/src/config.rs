//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! threads = 1
//!
//! [data]
//! path = "cohort.csv"
//! na = "NA"
//! columns = [
//!   { name = "x1", role = "continuous" },
//!   { name = "x2", role = "continuous" },
//!   { name = "y",  role = "continuous" },
//! ]
//!
//! [[imputer]]
//! target = "x2"
//! predictors = ["x1"]
//!
//! [outcome]
//! family = "gaussian"
//! response = "y"
//! effects = ["x1", "x2"]
//!
//! [impute]
//! m = 50
//! output = "stacked"
//!
//! [analyze]
//! weights = "mle"
//! variance = ["louis", "wood"]
//! ```
//!
//! `[simulate]` replaces `[data]`, `[[imputer]]` and `[outcome]` for
//! simulation studies.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use stackweight::generate::Scenario;
use stackweight::impute::{ChainConfig, ImputerFamily, ImputerSpec};
use stackweight::models::{Family, OutcomeSpec, Response};
use stackweight::sim::{MethodId, StudyConfig};
use stackweight::stack::{StackMode, WeightMode};
use stackweight::table::{Column, ColumnRole};
use stackweight::variance::{Cluster, VarianceMethod};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub imputer: Vec<ImputerConfig>,
    pub outcome: Option<OutcomeConfig>,
    pub impute: Option<ImputeConfig>,
    pub analyze: Option<AnalyzeConfig>,
    pub simulate: Option<SimulateConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn na() -> String {
    "NA".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(default = "na")]
    pub na: String,
    pub columns: Vec<ColumnConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnConfig {
    pub name: String,
    pub role: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputerConfig {
    pub target: String,
    #[serde(default)]
    pub predictors: Vec<String>,
    pub family: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ResponseConfig {
    Single(String),
    Survival { time: String, status: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    pub family: String,
    pub response: ResponseConfig,
    pub effects: Vec<String>,
    #[serde(default)]
    pub interactions: Vec<[String; 2]>,
    pub intercept: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeConfig {
    pub m: usize,
    pub cycles: Option<usize>,
    pub visit_order: Option<Vec<String>>,
    /// `stacked` or `separate`.
    pub output: Option<String>,
    pub stack_mode: Option<String>,
    /// Optional weights written into the stacked file.
    pub weights: Option<String>,
    /// Comparator mode: allow outcome columns as imputation predictors.
    #[serde(default)]
    pub outcome_as_predictor: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// `mle`, `draw` or `unit`.
    pub weights: Option<String>,
    pub variance: Option<Vec<String>>,
    pub sandwich_cluster: Option<String>,
    /// A stacked CSV.
    pub input: Option<PathBuf>,
    /// Separate imputed CSVs, required for Rubin's rules.
    pub inputs: Option<Vec<PathBuf>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: u8,
    pub replications: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub cycles: Option<usize>,
    pub mechanisms: Option<Vec<[f64; 3]>>,
    pub methods: Option<Vec<String>>,
    pub variance: Option<Vec<String>>,
    pub stack_mode: Option<String>,
    pub sandwich_cluster: Option<String>,
    /// Failed method runs tolerated, as a fraction of all runs, before exit 2.
    pub max_failure_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalysisWeights {
    Model(WeightMode),
    Unit,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {msg}"))
}

fn parse_with<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>, allowed: &str) -> Result<T, CliError> {
    f(value).ok_or_else(|| bad(key, format!("unknown value `{value}` (expected {allowed})")))
}

pub fn parse_weights(key: &str, s: &str) -> Result<AnalysisWeights, CliError> {
    match s {
        "unit" | "unit-1/M" | "1/M" => Ok(AnalysisWeights::Unit),
        other => parse_with(key, other, WeightMode::parse, "mle, draw or unit").map(AnalysisWeights::Model),
    }
}

fn parse_variances(key: &str, v: &[String]) -> Result<Vec<VarianceMethod>, CliError> {
    v.iter()
        .map(|s| parse_with(key, s, VarianceMethod::parse, "louis, sandwich, wood, rubin"))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn schema(&self) -> Result<(Vec<Column>, String), CliError> {
        let data = self.data.as_ref().ok_or_else(|| bad("data", "section is required"))?;
        let mut cols = Vec::with_capacity(data.columns.len());
        for (i, c) in data.columns.iter().enumerate() {
            let role = ColumnRole::parse(&c.role).ok_or_else(|| {
                bad(
                    &format!("data.columns[{i}].role"),
                    format!("unknown role `{}`", c.role),
                )
            })?;
            if cols.iter().any(|x: &Column| x.name == c.name) {
                return Err(bad(&format!("data.columns[{i}].name"), format!("duplicate column `{}`", c.name)));
            }
            cols.push(Column::new(c.name.clone(), role));
        }
        Ok((cols, data.na.clone()))
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        self.data.as_ref()?.path.as_ref().map(|p| self.resolve(p))
    }

    pub fn outcome_spec(&self) -> Result<OutcomeSpec, CliError> {
        let o = self.outcome.as_ref().ok_or_else(|| bad("outcome", "section is required"))?;
        let family = parse_with("outcome.family", &o.family, Family::parse, "gaussian, bernoulli or cox")?;
        let response = match (&o.response, family) {
            (ResponseConfig::Single(y), Family::Gaussian | Family::Bernoulli) => Response::Single(y.clone()),
            (ResponseConfig::Survival { time, status }, Family::Cox) => Response::Survival {
                time: time.clone(),
                status: status.clone(),
            },
            _ => {
                return Err(bad(
                    "outcome.response",
                    "use a column name for gaussian/bernoulli and { time, status } for cox",
                ))
            }
        };
        let mut spec = OutcomeSpec::new(family, response, o.effects.clone());
        for [a, b] in &o.interactions {
            spec = spec.with_interaction(a, b);
        }
        if let Some(i) = o.intercept {
            spec.intercept = i;
        }
        Ok(spec)
    }

    pub fn imputer_specs(&self, schema: &[Column]) -> Result<Vec<ImputerSpec>, CliError> {
        self.imputer
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let family = match &c.family {
                    Some(f) => parse_with(
                        &format!("imputer[{i}].family"),
                        f,
                        ImputerFamily::parse,
                        "bayes-linear, bayes-logistic or bayes-multinomial",
                    )?,
                    None => {
                        let role = schema
                            .iter()
                            .find(|col| col.name == c.target)
                            .ok_or_else(|| bad(&format!("imputer[{i}].target"), format!("unknown column `{}`", c.target)))?
                            .role;
                        ImputerFamily::for_role(role).ok_or_else(|| {
                            bad(&format!("imputer[{i}].target"), "outcome-role columns cannot be imputed")
                        })?
                    }
                };
                let preds: Vec<&str> = c.predictors.iter().map(String::as_str).collect();
                Ok(ImputerSpec::new(c.target.clone(), &preds, family))
            })
            .collect()
    }

    pub fn chain_config(&self, outcome: &OutcomeSpec) -> Result<ChainConfig, CliError> {
        let i = self.impute.as_ref().ok_or_else(|| bad("impute", "section is required"))?;
        let mut c = ChainConfig::new(i.m, stackweight::rng::split(self.seed, stackweight::rng::tag::IMPUTE));
        if let Some(cy) = i.cycles {
            c.cycles = cy;
        }
        c.visit_order = i.visit_order.clone();
        c.outcome_columns = outcome.response.columns().iter().map(|s| s.to_string()).collect();
        c.outcome_as_predictor = i.outcome_as_predictor;
        Ok(c)
    }

    pub fn impute_stack_mode(&self) -> Result<StackMode, CliError> {
        match self.impute.as_ref().and_then(|i| i.stack_mode.as_deref()) {
            None => Ok(StackMode::Short),
            Some(s) => parse_with("impute.stack_mode", s, StackMode::parse, "tall or short"),
        }
    }

    pub fn analysis_weights(&self) -> Result<AnalysisWeights, CliError> {
        match self.analyze.as_ref().and_then(|a| a.weights.as_deref()) {
            None => Ok(AnalysisWeights::Model(WeightMode::Mle)),
            Some(s) => parse_weights("analyze.weights", s),
        }
    }

    pub fn analysis_variances(&self) -> Result<Vec<VarianceMethod>, CliError> {
        match self.analyze.as_ref().and_then(|a| a.variance.as_ref()) {
            None => Ok(vec![VarianceMethod::Louis]),
            Some(v) => parse_variances("analyze.variance", v),
        }
    }

    pub fn analysis_cluster(&self) -> Result<Cluster, CliError> {
        match self.analyze.as_ref().and_then(|a| a.sandwich_cluster.as_deref()) {
            None => Ok(Cluster::Subject),
            Some(s) => parse_with("analyze.sandwich_cluster", s, Cluster::parse, "subject or row"),
        }
    }

    pub fn study_config(&self) -> Result<(StudyConfig, f64), CliError> {
        let s = self.simulate.as_ref().ok_or_else(|| bad("simulate", "section is required"))?;
        let scenario = Scenario::try_from(s.scenario).map_err(|e| bad("simulate.scenario", e))?;
        let mut cfg = StudyConfig::new(scenario, self.seed);
        cfg.threads = self.threads;
        if let Some(v) = s.replications {
            cfg.reps = v;
        }
        if let Some(v) = s.n {
            cfg.n = v;
        }
        if let Some(v) = s.m {
            cfg.m = v;
        }
        if let Some(v) = s.cycles {
            cfg.cycles = v;
        }
        if let Some(v) = &s.mechanisms {
            cfg.mechanisms = v.clone();
        }
        if let Some(v) = &s.methods {
            cfg.methods = v
                .iter()
                .map(|m| parse_with("simulate.methods", m, MethodId::parse, "a method id"))
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = &s.variance {
            cfg.variance_methods = parse_variances("simulate.variance", v)?;
        }
        if let Some(v) = &s.stack_mode {
            cfg.stack_mode = parse_with("simulate.stack_mode", v, StackMode::parse, "tall or short")?;
        }
        if let Some(v) = &s.sandwich_cluster {
            cfg.sandwich_cluster = parse_with("simulate.sandwich_cluster", v, Cluster::parse, "subject or row")?;
        }
        cfg.validate().map_err(|e| bad("simulate", e))?;
        let threshold = s.max_failure_rate.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(bad("simulate.max_failure_rate", "must lie in [0, 1]"));
        }
        Ok((cfg, threshold))
    }
}
