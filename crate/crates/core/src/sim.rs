//! Monte Carlo replication of the four simulation scenarios.

use std::fmt::{self, Write as _};
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generate::{apply_missingness, generate_scenario, Scenario, ScenarioId};
use crate::impute::{chained_impute, multinomial_select, ChainConfig, ImputerFamily, ImputerSpec};
use crate::models::{fit_weighted, Family, OutcomeSpec, Response};
use crate::rng::{self, tag};
use crate::stack::{complete_case_fit, compute_weights, stack, unit_mi_weights, StackMode, StackedTable, WeightMode};
use crate::table::{Column, ColumnRole, Table};
use crate::variance::{
    louis_variance, model_variance, rubin_combine, sandwich_variance, wood_variance, Cluster, MissingFractions,
    VarianceMethod, VarianceReport,
};

/// Name of the Nelson–Aalen column added for survival comparators.
pub const NELSON_AALEN: &str = "nelson_aalen";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    FullData,
    CompleteCase,
    MiceWithYRubin,
    MiceWithYStacked,
    MiceWithoutYRubin,
    ProposedStackedWeighted,
    ProposedStackedWeightedDraw,
    MiceMultinomial,
}

impl MethodId {
    pub const ALL: [MethodId; 8] = [
        Self::FullData,
        Self::CompleteCase,
        Self::MiceWithYRubin,
        Self::MiceWithYStacked,
        Self::MiceWithoutYRubin,
        Self::ProposedStackedWeighted,
        Self::ProposedStackedWeightedDraw,
        Self::MiceMultinomial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FullData => "full-data",
            Self::CompleteCase => "complete-case",
            Self::MiceWithYRubin => "mice-with-y-rubin",
            Self::MiceWithYStacked => "mice-with-y-stacked-1/M",
            Self::MiceWithoutYRubin => "mice-without-y-rubin",
            Self::ProposedStackedWeighted => "proposed-stacked-weighted",
            Self::ProposedStackedWeightedDraw => "proposed-stacked-weighted-draw",
            Self::MiceMultinomial => "mice-multinomial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Variance methods this pipeline reports, given the requested set.
    pub fn variance_methods(self, requested: &[VarianceMethod]) -> Vec<VarianceMethod> {
        match self {
            Self::FullData | Self::CompleteCase | Self::MiceMultinomial => vec![VarianceMethod::Model],
            Self::MiceWithYRubin | Self::MiceWithoutYRubin => vec![VarianceMethod::Rubin],
            _ => {
                let mut v: Vec<_> = requested
                    .iter()
                    .copied()
                    .filter(|m| matches!(m, VarianceMethod::Louis | VarianceMethod::Sandwich | VarianceMethod::Wood))
                    .collect();
                v.sort();
                v.dedup();
                v
            }
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The analysis model fitted in each scenario.
pub fn outcome_spec(s: Scenario) -> OutcomeSpec {
    let effects = |names: &[&str]| names.iter().map(|n| n.to_string()).collect::<Vec<_>>();
    match s {
        Scenario::Linear => OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), effects(&["x1", "x2"])),
        Scenario::Logistic => OutcomeSpec::new(
            Family::Bernoulli,
            Response::Single("y".into()),
            effects(&["x1", "x2", "x3"]),
        ),
        Scenario::Interaction => {
            OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), effects(&["x1", "x2"]))
                .with_interaction("x1", "x2")
        }
        Scenario::Survival => OutcomeSpec::new(
            Family::Cox,
            Response::Survival {
                time: "time".into(),
                status: "status".into(),
            },
            effects(&["x1", "x2"]),
        ),
    }
}

/// Generating values of the design coefficients, intercept first where
/// present.
pub fn truth(s: Scenario) -> Vec<f64> {
    match s {
        Scenario::Linear => vec![0.0, 0.53, 1.25],
        Scenario::Logistic => vec![0.5, 0.5, 0.5, 0.5],
        Scenario::Interaction => vec![0.0, 1.0, 1.0, 1.0],
        Scenario::Survival => vec![0.5, 0.5],
    }
}

/// Imputation models for the incomplete covariates. With `with_outcome`
/// the outcome (or, for survival, the event indicator and Nelson–Aalen
/// cumulative hazard) joins every predictor set.
pub fn imputer_specs(s: Scenario, with_outcome: bool) -> Vec<ImputerSpec> {
    let extra: Vec<&str> = match (with_outcome, s) {
        (false, _) => vec![],
        (true, Scenario::Survival) => vec!["status", NELSON_AALEN],
        (true, _) => vec!["y"],
    };
    let spec = |target: &str, base: &[&str]| {
        let preds: Vec<&str> = base.iter().chain(&extra).copied().collect();
        ImputerSpec::new(target, &preds, ImputerFamily::BayesLinear)
    };
    match s {
        Scenario::Logistic => vec![spec("x2", &["x1", "x3"]), spec("x3", &["x1", "x2"])],
        _ => vec![spec("x2", &["x1"])],
    }
}

/// Marginal Nelson–Aalen cumulative hazard at each subject's own time.
pub fn nelson_aalen(time: &[f64], status: &[f64]) -> Vec<f64> {
    let n = time.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    let mut out = vec![0.0; n];
    let mut h = 0.0;
    let mut i = 0;
    while i < n {
        let t = time[order[i]];
        let mut j = i;
        let mut d = 0.0;
        while j < n && time[order[j]] == t {
            d += status[order[j]];
            j += 1;
        }
        h += d / (n - i) as f64;
        for &r in &order[i..j] {
            out[r] = h;
        }
        i = j;
    }
    out
}

fn with_nelson_aalen(t: &Table) -> Result<Table> {
    let time = t.column_values(t.column_index("time")?);
    let status = t.column_values(t.column_index("status")?);
    t.with_column(
        Column::new(NELSON_AALEN, ColumnRole::Continuous),
        &nelson_aalen(&time, &status),
    )
}

/// Columns treated as outcome by the chained imputer.
pub fn outcome_columns(s: Scenario) -> Vec<&'static str> {
    match s {
        Scenario::Survival => vec!["time", "status", NELSON_AALEN],
        _ => vec!["y"],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub scenario: Scenario,
    /// Mechanism coefficients `(φ₀, φ₁, φ₂)` for the `x2` observation model.
    pub mechanisms: Vec<[f64; 3]>,
    pub reps: usize,
    pub n: usize,
    pub m: usize,
    pub cycles: usize,
    pub methods: Vec<MethodId>,
    pub variance_methods: Vec<VarianceMethod>,
    pub seed: u64,
    pub threads: usize,
    pub stack_mode: StackMode,
    pub sandwich_cluster: Cluster,
}

impl StudyConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            mechanisms: scenario.mechanism_grid(),
            reps: 500,
            n: 2000,
            m: 50,
            cycles: 10,
            methods: MethodId::ALL.to_vec(),
            variance_methods: vec![VarianceMethod::Louis, VarianceMethod::Sandwich, VarianceMethod::Wood],
            seed,
            threads: 1,
            stack_mode: StackMode::Tall,
            sandwich_cluster: Cluster::Row,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.m < 2 {
            return Err(Error::Config("M must be at least 2".into()));
        }
        if self.cycles < 1 {
            return Err(Error::Config("cycles must be at least 1".into()));
        }
        if self.n < 10 {
            return Err(Error::Config("n must be at least 10".into()));
        }
        if self.mechanisms.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("at least one mechanism and one method are required".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Label for a mechanism, e.g. `phi=(0.5,1,-1)`.
pub fn mechanism_label(phi: [f64; 3]) -> String {
    format!("phi=({},{},{})", phi[0], phi[1], phi[2])
}

/// Outcome of one method in one replication.
pub type MethodOutcome = std::result::Result<Vec<VarianceReport>, String>;

#[derive(Clone, Debug)]
pub struct Replication {
    pub mechanism: usize,
    pub rep: usize,
    pub results: Vec<(MethodId, MethodOutcome)>,
}

fn rep_seed(cfg: &StudyConfig, rep: usize) -> u64 {
    rng::split_path(cfg.seed, &[tag::REPLICATION, rep as u64])
}

struct Imputations {
    original: Table,
    tables: Vec<Table>,
}

fn impute_set(cfg: &StudyConfig, masked: &Table, with_outcome: bool, seed: u64) -> Result<Imputations> {
    let s = cfg.scenario;
    let working = if with_outcome && s == Scenario::Survival {
        with_nelson_aalen(masked)?
    } else {
        masked.clone()
    };
    let mut chain = ChainConfig::new(cfg.m, seed).with_outcome(&outcome_columns(s));
    chain.cycles = cfg.cycles;
    chain.outcome_as_predictor = with_outcome;
    let tables = chained_impute(&working, &imputer_specs(s, with_outcome), &chain)?;
    Ok(Imputations {
        original: working,
        tables,
    })
}

fn stacked_reports(
    cfg: &StudyConfig,
    method: MethodId,
    spec: &OutcomeSpec,
    s: &StackedTable,
    fractions: &MissingFractions,
) -> Result<Vec<VarianceReport>> {
    let fit = fit_weighted(s.table(), spec, s.weights()?)?;
    method
        .variance_methods(&cfg.variance_methods)
        .into_iter()
        .map(|v| match v {
            VarianceMethod::Louis => louis_variance(s, &fit),
            VarianceMethod::Sandwich => sandwich_variance(s, &fit, cfg.sandwich_cluster),
            VarianceMethod::Wood => wood_variance(s, &fit, spec, fractions),
            _ => unreachable!("filtered"),
        })
        .collect()
}

fn rubin(spec: &OutcomeSpec, imps: &Imputations) -> Result<Vec<VarianceReport>> {
    let mut fits = Vec::with_capacity(imps.tables.len());
    let mut names = Vec::new();
    for t in &imps.tables {
        let f = fit_weighted(t, spec, &vec![1.0; t.n_rows()])?;
        names = f.names.clone();
        let cov = f.model_covariance()?;
        fits.push((f.coef, cov));
    }
    Ok(vec![rubin_combine(names, &fits)?])
}

fn available<'a, T>(v: &'a Option<std::result::Result<T, String>>, what: &str) -> std::result::Result<&'a T, String> {
    match v {
        Some(Ok(x)) => Ok(x),
        Some(Err(e)) => Err(e.clone()),
        None => Err(format!("{what} not requested")),
    }
}

/// Run every configured method on one generated, masked dataset.
pub fn run_replication(cfg: &StudyConfig, mechanism: usize, rep: usize) -> Result<Replication> {
    cfg.validate()?;
    let phi = *cfg
        .mechanisms
        .get(mechanism)
        .ok_or_else(|| Error::Config(format!("no mechanism {mechanism}")))?;
    let s = cfg.scenario;
    let seed = rep_seed(cfg, rep);
    let full = generate_scenario(ScenarioId {
        scenario: s,
        n: cfg.n,
        seed,
    })?;
    let mask_seed = rng::split_path(seed, &[tag::MASK, mechanism as u64]);
    let masked = apply_missingness(&full, &s.mechanisms(phi), mask_seed)?;
    let spec = outcome_spec(s);
    let fractions = MissingFractions::from_table(&masked);
    let imp_seed = rng::split_path(seed, &[tag::IMPUTE, mechanism as u64]);
    let imp_y_seed = rng::split_path(seed, &[tag::IMPUTE_WITH_Y, mechanism as u64]);
    let weight_seed = rng::split_path(seed, &[tag::WEIGHTS, mechanism as u64]);
    let select_seed = rng::split_path(seed, &[tag::SELECT, mechanism as u64]);

    let wants = |ms: &[MethodId]| cfg.methods.iter().any(|m| ms.contains(m));
    let without_y = if wants(&[
        MethodId::MiceWithoutYRubin,
        MethodId::ProposedStackedWeighted,
        MethodId::ProposedStackedWeightedDraw,
        MethodId::MiceMultinomial,
    ]) {
        Some(impute_set(cfg, &masked, false, imp_seed).map_err(|e| e.to_string()))
    } else {
        None
    };
    let with_y = if wants(&[MethodId::MiceWithYRubin, MethodId::MiceWithYStacked]) {
        Some(impute_set(cfg, &masked, true, imp_y_seed).map_err(|e| e.to_string()))
    } else {
        None
    };
    let cc = if wants(&[
        MethodId::CompleteCase,
        MethodId::ProposedStackedWeighted,
        MethodId::ProposedStackedWeightedDraw,
        MethodId::MiceMultinomial,
    ]) {
        Some(complete_case_fit(&masked, &spec).map_err(|e| e.to_string()))
    } else {
        None
    };

    let mut results = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let out: MethodOutcome = (|| -> std::result::Result<Vec<VarianceReport>, String> {
            let e = |e: Error| e.to_string();
            match method {
                MethodId::FullData => {
                    let f = fit_weighted(&full, &spec, &vec![1.0; full.n_rows()]).map_err(e)?;
                    Ok(vec![model_variance(&f).map_err(e)?])
                }
                MethodId::CompleteCase => Ok(vec![model_variance(&available(&cc, "complete-case fit")?.fit).map_err(e)?]),
                MethodId::MiceWithYRubin => rubin(&spec, available(&with_y, "imputations")?).map_err(e),
                MethodId::MiceWithoutYRubin => rubin(&spec, available(&without_y, "imputations")?).map_err(e),
                MethodId::MiceWithYStacked => {
                    let i = available(&with_y, "imputations")?;
                    let st = unit_mi_weights(&stack(&i.original, &i.tables, cfg.stack_mode).map_err(e)?);
                    stacked_reports(cfg, method, &spec, &st, &fractions).map_err(e)
                }
                MethodId::ProposedStackedWeighted | MethodId::ProposedStackedWeightedDraw => {
                    let i = available(&without_y, "imputations")?;
                    let mode = if method == MethodId::ProposedStackedWeighted {
                        WeightMode::Mle
                    } else {
                        WeightMode::Draw
                    };
                    let st = stack(&i.original, &i.tables, cfg.stack_mode).map_err(e)?;
                    let (st, _) = compute_weights(&st, available(&cc, "complete-case fit")?, &spec, mode, weight_seed).map_err(e)?;
                    stacked_reports(cfg, method, &spec, &st, &fractions).map_err(e)
                }
                MethodId::MiceMultinomial => {
                    let i = available(&without_y, "imputations")?;
                    let tall = stack(&i.original, &i.tables, StackMode::Tall).map_err(e)?;
                    let (tall, _) = compute_weights(&tall, available(&cc, "complete-case fit")?, &spec, WeightMode::Mle, weight_seed).map_err(e)?;
                    let w = tall.weights().map_err(e)?;
                    let dens: Vec<Vec<f64>> = (0..tall.n_subjects())
                        .map(|subj| tall.rows_of(subj).iter().map(|&r| w[r]).collect())
                        .collect();
                    let chosen = multinomial_select(&i.tables, &dens, select_seed).map_err(e)?;
                    let f = fit_weighted(&chosen, &spec, &vec![1.0; chosen.n_rows()]).map_err(e)?;
                    Ok(vec![model_variance(&f).map_err(e)?])
                }
            }
        })();
        results.push((method, out));
    }
    Ok(Replication {
        mechanism,
        rep,
        results,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub scenario: u8,
    pub mechanism: String,
    pub method: MethodId,
    pub variance_method: VarianceMethod,
    pub coefficient: String,
    pub bias_x100: f64,
    pub emp_var: f64,
    pub rel_emp_var: f64,
    pub mean_est_var_x100: f64,
    pub coverage_pct: f64,
    pub n_fail: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
    pub reps: usize,
}

impl StudyReport {
    pub fn get(&self, mechanism: &str, method: MethodId, variance: VarianceMethod, coefficient: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.mechanism == mechanism && r.method == method && r.variance_method == variance && r.coefficient == coefficient
        })
    }

    /// Total failed method runs across all rows' (method, mechanism) cells.
    pub fn failure_rate(&self) -> f64 {
        let mut seen = std::collections::BTreeMap::new();
        for r in &self.rows {
            seen.insert((r.mechanism.clone(), r.method), r.n_fail);
        }
        if seen.is_empty() {
            return 0.0;
        }
        seen.values().sum::<usize>() as f64 / (seen.len() * self.reps) as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario",
            "mechanism",
            "method",
            "variance_method",
            "coefficient",
            "bias_x100",
            "emp_var",
            "rel_emp_var",
            "mean_est_var_x100",
            "coverage_pct",
            "n_fail",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.to_string(),
                r.mechanism.clone(),
                r.method.name().to_string(),
                r.variance_method.name().to_string(),
                r.coefficient.clone(),
                format!("{}", r.bias_x100),
                format!("{}", r.emp_var),
                format!("{}", r.rel_emp_var),
                format!("{}", r.mean_est_var_x100),
                format!("{}", r.coverage_pct),
                r.n_fail.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let header = [
            "scenario", "mechanism", "method", "variance", "coef", "bias x100", "emp var", "rel var", "est var x100",
            "cover %", "fail",
        ];
        let cells: Vec<[String; 11]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.scenario.to_string(),
                    r.mechanism.clone(),
                    r.method.name().to_string(),
                    r.variance_method.name().to_string(),
                    r.coefficient.clone(),
                    format!("{:.2}", r.bias_x100),
                    format!("{:.5}", r.emp_var),
                    format!("{:.2}", r.rel_emp_var),
                    format!("{:.3}", r.mean_est_var_x100),
                    format!("{:.1}", r.coverage_pct),
                    r.n_fail.to_string(),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (k, c) in row.iter().enumerate() {
                width[k] = width[k].max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            for (k, c) in row.iter().enumerate() {
                let pad = width[k] - c.chars().count();
                if k < 5 {
                    let _ = write!(out, "{c}{}", " ".repeat(pad));
                } else {
                    let _ = write!(out, "{}{c}", " ".repeat(pad));
                }
                out.push_str(if k + 1 < row.len() { "  " } else { "\n" });
            }
        };
        line(&mut out, &header);
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }
}

#[derive(Default)]
struct Acc {
    estimates: Vec<f64>,
    var_sum: f64,
    covered: usize,
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Aggregate replications (in any order) into the summary table.
pub fn summarize(cfg: &StudyConfig, reps: &[Replication]) -> StudyReport {
    let spec = outcome_spec(cfg.scenario);
    let truth = truth(cfg.scenario);
    let intercept = spec.has_intercept() as usize;
    let mut sorted: Vec<&Replication> = reps.iter().collect();
    sorted.sort_by_key(|r| (r.mechanism, r.rep));

    let mut rows = Vec::new();
    for (mi, &phi) in cfg.mechanisms.iter().enumerate() {
        let mech_reps: Vec<&Replication> = sorted.iter().copied().filter(|r| r.mechanism == mi).collect();
        let mut full_var: std::collections::HashMap<String, f64> = Default::default();
        let mut block = Vec::new();
        for &method in &cfg.methods {
            let mut n_fail = 0;
            let vms = method.variance_methods(&cfg.variance_methods);
            let mut accs: Vec<Vec<Acc>> = vms.iter().map(|_| Vec::new()).collect();
            let mut names: Vec<String> = Vec::new();
            for rep in &mech_reps {
                let Some((_, out)) = rep.results.iter().find(|(m, _)| *m == method) else {
                    continue;
                };
                match out {
                    Err(_) => n_fail += 1,
                    Ok(reports) => {
                        for (k, vm) in vms.iter().enumerate() {
                            let Some(r) = reports.iter().find(|r| r.method == *vm) else {
                                continue;
                            };
                            if names.is_empty() {
                                names = r.names.clone();
                            }
                            if accs[k].is_empty() {
                                accs[k] = (0..r.names.len()).map(|_| Acc::default()).collect();
                            }
                            for (j, acc) in accs[k].iter_mut().enumerate() {
                                acc.estimates.push(r.estimate[j]);
                                acc.var_sum += r.se[j] * r.se[j];
                                acc.covered += r.covers(j, truth[j]) as usize;
                            }
                        }
                    }
                }
            }
            for (k, vm) in vms.iter().enumerate() {
                for j in intercept..truth.len() {
                    let acc = accs[k].get(j);
                    let cnt = acc.map_or(0, |a| a.estimates.len());
                    let name = names
                        .get(j)
                        .cloned()
                        .unwrap_or_else(|| spec_names(&spec).get(j).cloned().unwrap_or_default());
                    let (bias, ev, mv, cov) = match acc {
                        Some(a) if cnt > 0 => {
                            let mean = a.estimates.iter().sum::<f64>() / cnt as f64;
                            (
                                (mean - truth[j]) * 100.0,
                                sample_variance(&a.estimates),
                                a.var_sum / cnt as f64 * 100.0,
                                a.covered as f64 / cnt as f64 * 100.0,
                            )
                        }
                        _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
                    };
                    if method == MethodId::FullData {
                        full_var.insert(name.clone(), ev);
                    }
                    block.push(ReportRow {
                        scenario: cfg.scenario.id(),
                        mechanism: mechanism_label(phi),
                        method,
                        variance_method: *vm,
                        coefficient: name,
                        bias_x100: bias,
                        emp_var: ev,
                        rel_emp_var: f64::NAN,
                        mean_est_var_x100: mv,
                        coverage_pct: cov,
                        n_fail,
                    });
                }
            }
        }
        for row in &mut block {
            if let Some(&fv) = full_var.get(&row.coefficient) {
                row.rel_emp_var = if row.method == MethodId::FullData { 1.0 } else { row.emp_var / fv };
            }
        }
        rows.extend(block);
    }
    StudyReport { rows, reps: cfg.reps }
}

fn spec_names(spec: &OutcomeSpec) -> Vec<String> {
    let mut v = Vec::new();
    if spec.has_intercept() {
        v.push("(Intercept)".to_string());
    }
    v.extend(spec.main_effects.iter().cloned());
    v.extend(spec.interactions.iter().map(|(a, b)| format!("{a}:{b}")));
    v
}

/// Run all replications of all mechanisms on `cfg.threads` worker threads
/// and aggregate deterministically.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.mechanisms.len())
        .flat_map(|m| (0..cfg.reps).map(move |r| (m, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let reps: Vec<Replication> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, r)| run_replication(cfg, m, r))
            .collect::<Result<_>>()
    })?;
    Ok(summarize(cfg, &reps))
}
