//! `stackweight` command-line front end: `simulate`, `impute` and `analyze`.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use stackweight::error::Error as CoreError;
use stackweight::impute::{chained_impute, impute_outcome};
use stackweight::models::{fit_weighted, FitResult, OutcomeSpec};
use stackweight::rng::{self, tag};
use stackweight::sim::{run_study, StudyReport};
use stackweight::stack::{
    complete_case_fit, compute_weights, stack, unit_mi_weights, CompleteCaseFit, StackMode, StackedTable,
    WeightDiagnostics,
};
use stackweight::table::{load_csv, write_csv, Column, Table};
use stackweight::variance::{
    louis_variance, rubin_combine, sandwich_variance, wood_variance, write_reports, Cluster, MissingFractions,
    VarianceMethod, VarianceReport,
};
use thiserror::Error;

pub use config::{AnalysisWeights, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context { context: String, source: CoreError },
    #[error("method failure rate {rate:.4} exceeds max_failure_rate {threshold}")]
    FailureRate { rate: f64, threshold: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::FailureRate { .. } => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn ctx(context: impl Into<String>) -> impl FnOnce(CoreError) -> CliError {
    let context = context.into();
    move |source| CliError::Context { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "stackweight", version, about = "Stacked, weighted multiple imputation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation study.
    Simulate(Args),
    /// Impute a dataset and write imputed or stacked CSVs.
    Impute(Args),
    /// Fit the analysis model to imputed data.
    Analyze(Args),
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<()> {
    let (args, cmd) = match &cli.command {
        Command::Simulate(a) => (a, "simulate"),
        Command::Impute(a) => (a, "impute"),
        Command::Analyze(a) => (a, "analyze"),
    };
    let cfg = RunConfig::load(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    let echo = |so: &mut dyn Write, s: &str| {
        let _ = so.write_all(s.as_bytes());
    };
    match cmd {
        "simulate" => {
            let (report, threshold) = cmd_simulate(&cfg, &out)?;
            echo(&mut so, &report.to_text());
            let rate = report.failure_rate();
            if rate > threshold {
                return Err(CliError::FailureRate { rate, threshold });
            }
        }
        "impute" => {
            let written = cmd_impute(&cfg, &out)?;
            for p in written {
                echo(&mut so, &format!("wrote {}\n", p.display()));
            }
        }
        _ => {
            let a = cmd_analyze(&cfg, &out)?;
            echo(&mut so, &a.summary());
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Run the configured study and write `study.csv` and `study.txt`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<(StudyReport, f64)> {
    let (study, threshold) = cfg.study_config()?;
    let report = run_study(&study)?;
    let csv = out.join("study.csv");
    let mut w = create(&csv)?;
    report.write_csv(&mut w)?;
    finish(w, &csv)?;
    let txt = out.join("study.txt");
    let mut w = create(&txt)?;
    w.write_all(report.to_text().as_bytes()).map_err(|source| CliError::Io {
        path: txt.clone(),
        source,
    })?;
    finish(w, &txt)?;
    Ok((report, threshold))
}

/// Output of the imputation step.
#[derive(Clone, Debug)]
pub struct Imputed {
    pub original: Table,
    pub tables: Vec<Table>,
    pub stacked: StackedTable,
}

fn load_original(cfg: &RunConfig, schema: &[Column], na: &str) -> Result<Table> {
    let path = cfg
        .data_path()
        .ok_or_else(|| CliError::Config("`data.path`: required".into()))?;
    load_csv(&path, schema, na).map_err(ctx(path.display().to_string()))
}

/// Impute covariates by chained equations, then fill missing outcomes from a
/// complete-case draw, and stack.
pub fn impute_data(cfg: &RunConfig, original: &Table) -> Result<Imputed> {
    let (schema, _) = cfg.schema()?;
    let spec = cfg.outcome_spec()?;
    let specs = cfg.imputer_specs(&schema)?;
    let chain = cfg.chain_config(&spec)?;
    let mut tables = chained_impute(original, &specs, &chain).map_err(ctx("impute"))?;
    let ycols = spec.response.columns();
    let y_missing = ycols
        .iter()
        .map(|c| original.column_index(c).map(|j| original.missing_count(j) > 0))
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .any(|b| b);
    if y_missing {
        let cc = complete_case_fit(original, &spec).map_err(ctx("complete-case fit for outcome imputation"))?;
        for (k, t) in tables.iter_mut().enumerate() {
            let seed = rng::split_path(cfg.seed, &[tag::OUTCOME, k as u64]);
            let params = cc.draw(&mut rng::stream(seed))?;
            *t = impute_outcome(t, &spec, &params, seed).map_err(ctx(format!("outcome imputation {}", k + 1)))?;
        }
    }
    let mut stacked = stack(original, &tables, cfg.impute_stack_mode()?)?;
    stacked.mark_outcome_imputed(original, &spec)?;
    Ok(Imputed {
        original: original.clone(),
        tables,
        stacked,
    })
}

fn weigh(
    cfg: &RunConfig,
    s: &StackedTable,
    cc: Option<&CompleteCaseFit>,
    spec: &OutcomeSpec,
    mode: AnalysisWeights,
) -> Result<(StackedTable, WeightDiagnostics)> {
    match mode {
        AnalysisWeights::Unit => Ok((unit_mi_weights(s), WeightDiagnostics::default())),
        AnalysisWeights::Model(m) => {
            let cc = cc.ok_or_else(|| CliError::Config("model weights need a complete-case fit".into()))?;
            let seed = rng::split(cfg.seed, tag::WEIGHTS);
            compute_weights(s, cc, spec, m, seed).map_err(ctx("weights"))
        }
    }
}

/// Run `impute` and write `stacked.csv` or `imp_001.csv`, ... to `out`.
pub fn cmd_impute(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (schema, na) = cfg.schema()?;
    let original = load_original(cfg, &schema, &na)?;
    let imp = impute_data(cfg, &original)?;
    let section = cfg.impute.as_ref().expect("validated by chain_config");
    let output = section.output.as_deref().unwrap_or("stacked");
    let mut written = Vec::new();
    match output {
        "stacked" => {
            let mut s = imp.stacked;
            if let Some(w) = &section.weights {
                let mode = config::parse_weights("impute.weights", w)?;
                let spec = cfg.outcome_spec()?;
                let cc = match mode {
                    AnalysisWeights::Model(_) => Some(complete_case_fit(&original, &spec).map_err(ctx("complete-case fit"))?),
                    AnalysisWeights::Unit => None,
                };
                s = weigh(cfg, &s, cc.as_ref(), &spec, mode)?.0;
            }
            let path = out.join("stacked.csv");
            let mut w = create(&path)?;
            s.write_csv(&mut w, &na)?;
            finish(w, &path)?;
            written.push(path);
        }
        "separate" => {
            if section.weights.is_some() {
                return Err(CliError::Config("`impute.weights`: requires output = \"stacked\"".into()));
            }
            for (k, t) in imp.tables.iter().enumerate() {
                let path = out.join(format!("imp_{:03}.csv", k + 1));
                let mut w = create(&path)?;
                write_csv(&mut w, t, &na, &[])?;
                finish(w, &path)?;
                written.push(path);
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "`impute.output`: unknown value `{other}` (expected stacked or separate)"
            )))
        }
    }
    Ok(written)
}

/// Result of the analysis step.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub fit: FitResult,
    pub reports: Vec<VarianceReport>,
    pub diagnostics: WeightDiagnostics,
    pub n_subjects: usize,
    pub n_rows: usize,
}

impl Analysis {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} subjects, {} stacked rows, {} uniform-weight fallbacks\n",
            self.n_subjects, self.n_rows, self.diagnostics.uniform_fallback
        );
        s.push_str(&format!(
            "{:<10} {:<14} {:>12} {:>12} {:>12} {:>12}\n",
            "method", "coefficient", "estimate", "se", "ci_low", "ci_high"
        ));
        for r in &self.reports {
            for (j, name) in r.names.iter().enumerate() {
                let (lo, hi) = r.ci(j);
                s.push_str(&format!(
                    "{:<10} {:<14} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
                    r.method.name(),
                    name,
                    r.estimate[j],
                    r.se[j],
                    lo,
                    hi
                ));
            }
        }
        s
    }
}

/// Per-imputation completed tables recovered from a stack.
pub fn unstack(s: &StackedTable) -> Vec<Table> {
    (0..s.m())
        .map(|k| {
            let rows: Vec<usize> = (0..s.n_subjects())
                .map(|i| {
                    let rows = s.rows_of(i);
                    *rows.iter().find(|&&r| s.imputations()[r] == k).unwrap_or(&rows[0])
                })
                .collect();
            s.table().select_rows(&rows)
        })
        .collect()
}

fn complete_subject_fit(s: &StackedTable, spec: &OutcomeSpec) -> Result<CompleteCaseFit> {
    let rows: Vec<usize> = (0..s.n_subjects())
        .filter(|&i| s.is_complete(i))
        .map(|i| s.rows_of(i)[0])
        .collect();
    complete_case_fit(&s.table().select_rows(&rows), spec).map_err(ctx("complete-case fit"))
}

/// Weight, fit and compute the requested variances. `original` supplies the
/// complete-case fit and missing fractions; without it the complete subjects
/// of the stack are used and Wood is unavailable.
pub fn analyze_stack(cfg: &RunConfig, s: &StackedTable, original: Option<&Table>) -> Result<Analysis> {
    let spec = cfg.outcome_spec()?;
    let mode = cfg.analysis_weights()?;
    let variances = cfg.analysis_variances()?;
    let cluster: Cluster = cfg.analysis_cluster()?;
    let cc = match mode {
        AnalysisWeights::Unit => None,
        AnalysisWeights::Model(_) => Some(match original {
            Some(t) => complete_case_fit(t, &spec).map_err(ctx("complete-case fit"))?,
            None => complete_subject_fit(s, &spec)?,
        }),
    };
    let (weighted, diagnostics) = weigh(cfg, s, cc.as_ref(), &spec, mode)?;
    if let Ok(stored) = s.weights() {
        let fresh = weighted.weights()?;
        let diff = stored.iter().zip(fresh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if diff > 1e-10 {
            return Err(CliError::Config(format!(
                "`analyze.weights`: stored `_weight` column differs from recomputed weights by {diff:.3e}"
            )));
        }
    }
    let fit = fit_weighted(weighted.table(), &spec, weighted.weights()?).map_err(ctx("weighted fit"))?;
    let mut reports = Vec::with_capacity(variances.len());
    for v in variances {
        let r = match v {
            VarianceMethod::Louis => louis_variance(&weighted, &fit).map_err(ctx("louis"))?,
            VarianceMethod::Sandwich => sandwich_variance(&weighted, &fit, cluster).map_err(ctx("sandwich"))?,
            VarianceMethod::Wood => {
                let t = original.ok_or_else(|| CliError::Config("`analyze.variance`: wood needs `data.path`".into()))?;
                wood_variance(&weighted, &fit, &spec, &MissingFractions::from_table(t)).map_err(ctx("wood"))?
            }
            VarianceMethod::Rubin => {
                let mut fits = Vec::with_capacity(s.m());
                let mut names = Vec::new();
                for (k, t) in unstack(s).iter().enumerate() {
                    let f = fit_weighted(t, &spec, &vec![1.0; t.n_rows()]).map_err(ctx(format!("imputation {}", k + 1)))?;
                    let cov = f.model_covariance().map_err(ctx(format!("imputation {}", k + 1)))?;
                    names = f.names.clone();
                    fits.push((f.coef, cov));
                }
                rubin_combine(names, &fits).map_err(ctx("rubin"))?
            }
            VarianceMethod::Model => {
                return Err(CliError::Config(
                    "`analyze.variance`: expected louis, sandwich, wood or rubin".into(),
                ))
            }
        };
        reports.push(r);
    }
    Ok(Analysis {
        fit,
        n_subjects: weighted.n_subjects(),
        n_rows: weighted.n_rows(),
        reports,
        diagnostics,
    })
}

/// Read the configured inputs, analyze, and write `estimates.csv`.
pub fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<Analysis> {
    let (schema, na) = cfg.schema()?;
    let section = cfg
        .analyze
        .as_ref()
        .ok_or_else(|| CliError::Config("`analyze`: section is required".into()))?;
    let original = match cfg.data_path() {
        Some(_) => Some(load_original(cfg, &schema, &na)?),
        None => None,
    };
    let variances = cfg.analysis_variances()?;
    let s = match (&section.input, &section.inputs) {
        (Some(p), None) => {
            if variances.contains(&VarianceMethod::Rubin) {
                return Err(CliError::Config(
                    "`analyze.variance`: rubin requires the separate files in `analyze.inputs`".into(),
                ));
            }
            let path = cfg.resolve(p);
            let f = File::open(&path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            StackedTable::read_csv(std::io::BufReader::new(f), &schema, &na).map_err(ctx(path.display().to_string()))?
        }
        (None, Some(ps)) => {
            let original = original
                .as_ref()
                .ok_or_else(|| CliError::Config("`data.path`: required with `analyze.inputs`".into()))?;
            let tables = ps
                .iter()
                .map(|p| {
                    let path = cfg.resolve(p);
                    load_csv(&path, &schema, &na).map_err(ctx(path.display().to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mode = cfg.impute_stack_mode().unwrap_or(StackMode::Short);
            let mut s = stack(original, &tables, mode)?;
            s.mark_outcome_imputed(original, &cfg.outcome_spec()?)?;
            s
        }
        _ => {
            return Err(CliError::Config(
                "`analyze`: set exactly one of `input` (stacked) or `inputs` (separate)".into(),
            ))
        }
    };
    let a = analyze_stack(cfg, &s, original.as_ref())?;
    let path = out.join("estimates.csv");
    let mut w = create(&path)?;
    write_reports(&mut w, &a.reports)?;
    finish(w, &path)?;
    Ok(a)
}
