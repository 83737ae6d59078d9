//! Multiple imputation by chained equations.
//!
//! Imputation models regress each incomplete covariate on other covariates
//! only. Outcome columns are rejected as predictors unless the caller opts
//! into the "with outcome" comparator mode explicitly.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{mvn_draw, spd_inverse};
use crate::models::newton::{checked_cholesky, newton_raphson, Objective, SCORE_TOL};
use crate::models::{fit_frame, Design, Family, ModelFrame, OutcomeParams, OutcomeSpec, Response};
use crate::rng::{self, Rng};
use crate::table::{ColumnRole, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputerFamily {
    BayesLinear,
    BayesLogistic,
    BayesMultinomial,
}

impl ImputerFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bayes-linear" | "linear" | "norm" => Some(Self::BayesLinear),
            "bayes-logistic" | "logistic" | "logreg" => Some(Self::BayesLogistic),
            "bayes-multinomial" | "multinomial" | "polyreg" => Some(Self::BayesMultinomial),
            _ => None,
        }
    }

    /// The family matching a column role.
    pub fn for_role(role: ColumnRole) -> Option<Self> {
        match role {
            ColumnRole::Continuous => Some(Self::BayesLinear),
            ColumnRole::Binary => Some(Self::BayesLogistic),
            ColumnRole::Categorical(_) => Some(Self::BayesMultinomial),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputerSpec {
    pub target: String,
    pub predictors: Vec<String>,
    pub family: ImputerFamily,
}

impl ImputerSpec {
    pub fn new(target: impl Into<String>, predictors: &[&str], family: ImputerFamily) -> Self {
        Self {
            target: target.into(),
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            family,
        }
    }

    /// Structural checks: the target is not a predictor, the family fits the
    /// target role, and no `forbidden` (outcome) column is used.
    pub fn validate(&self, t: &Table, forbidden: &[String]) -> Result<()> {
        let bad = |reason: String| Error::InvalidImputer {
            target: self.target.clone(),
            reason,
        };
        let tc = t.column_index(&self.target)?;
        if self.predictors.contains(&self.target) {
            return Err(bad("target listed as its own predictor".into()));
        }
        if forbidden.contains(&self.target) {
            return Err(bad("outcome columns are not imputed by chained equations".into()));
        }
        for p in &self.predictors {
            t.column_index(p)?;
            if forbidden.contains(p) {
                return Err(bad(format!("outcome column `{p}` may not be an imputation predictor")));
            }
        }
        if ImputerFamily::for_role(t.role(tc)) != Some(self.family) {
            return Err(bad(format!(
                "family {:?} does not match column role {:?}",
                self.family,
                t.role(tc)
            )));
        }
        Ok(())
    }

    fn design_spec(&self) -> OutcomeSpec {
        OutcomeSpec::new(
            Family::Gaussian,
            Response::Single(self.target.clone()),
            self.predictors.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub m: usize,
    pub cycles: usize,
    /// Column visit order; ascending missingness count when `None`.
    pub visit_order: Option<Vec<String>>,
    pub seed: u64,
    /// Columns that may never be imputation predictors or targets.
    pub outcome_columns: Vec<String>,
    /// Comparator mode: allow outcome columns as predictors.
    pub outcome_as_predictor: bool,
}

impl ChainConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            cycles: 10,
            visit_order: None,
            seed,
            outcome_columns: Vec::new(),
            outcome_as_predictor: false,
        }
    }

    pub fn with_outcome(mut self, cols: &[&str]) -> Self {
        self.outcome_columns = cols.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// A posterior (or asymptotic) draw of imputation-model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputerDraw {
    pub family: ImputerFamily,
    /// Linear/logistic: one coefficient per design column. Multinomial:
    /// `(k − 1)` blocks, one per non-reference level.
    pub coef: DVector<f64>,
    /// Linear only.
    pub dispersion: Option<f64>,
    pub levels: usize,
}

/// Draw imputation parameters from rows with the target and all predictors
/// observed.
pub fn draw_imputer(t: &Table, spec: &ImputerSpec, seed: u64) -> Result<ImputerDraw> {
    spec.validate(t, &[])?;
    let mut cols = vec![t.column_index(&spec.target)?];
    for p in &spec.predictors {
        cols.push(t.column_index(p)?);
    }
    let rows: Vec<usize> = t
        .complete_rows(&cols)
        .into_iter()
        .enumerate()
        .filter_map(|(r, ok)| ok.then_some(r))
        .collect();
    let design = Design::new(&spec.design_spec(), t)?;
    let mut rng = rng::stream(seed);
    draw_on_rows(t, spec, &design, &rows, &mut rng)
}

fn draw_on_rows(
    t: &Table,
    spec: &ImputerSpec,
    design: &Design,
    rows: &[usize],
    rng: &mut Rng,
) -> Result<ImputerDraw> {
    let needed = spec.predictors.len() + 2;
    if rows.len() < needed {
        return Err(Error::InsufficientRows {
            needed,
            available: rows.len(),
        });
    }
    let frame = ModelFrame::build(design, &spec.design_spec(), t, Some(rows))?;
    match spec.family {
        ImputerFamily::BayesLinear => draw_linear(&frame, rng),
        ImputerFamily::BayesLogistic => {
            let mut f = frame;
            f.family = Family::Bernoulli;
            let fit = fit_frame(&f, &vec![1.0; f.n_rows()])?;
            let cov = fit.model_covariance()?;
            Ok(ImputerDraw {
                family: ImputerFamily::BayesLogistic,
                coef: mvn_draw(&fit.coef, &cov, rng)?,
                dispersion: None,
                levels: 2,
            })
        }
        ImputerFamily::BayesMultinomial => {
            let k = match t.role(t.column_index(&spec.target)?) {
                ColumnRole::Categorical(k) => k,
                _ => unreachable!("validated"),
            };
            draw_multinomial(&frame, k, rng)
        }
    }
}

/// Normal–inverse-χ² posterior under the reference prior.
fn draw_linear(f: &ModelFrame, rng: &mut Rng) -> Result<ImputerDraw> {
    let (n, q) = f.x.shape();
    let xtx = f.x.transpose() * &f.x;
    let y = DVector::from_column_slice(&f.y);
    let chol = checked_cholesky(&xtx)?;
    let beta_hat = chol.solve(&(f.x.transpose() * &y));
    let resid = &y - &f.x * &beta_hat;
    let rss = resid.norm_squared();
    let scale = y.norm_squared().max(1.0);
    if !(rss > 1e-24 * scale) {
        return Err(Error::SingularDesign);
    }
    let df = (n - q) as f64;
    let chi2: f64 = ChiSquared::new(df).expect("df > 0").sample(rng);
    let sigma2 = rss / chi2;
    let cov = spd_inverse(&xtx)? * sigma2;
    Ok(ImputerDraw {
        family: ImputerFamily::BayesLinear,
        coef: mvn_draw(&beta_hat, &cov, rng)?,
        dispersion: Some(sigma2),
        levels: 0,
    })
}

/// Baseline-category multinomial logit on a flat `(k−1)·q` parameter.
struct Multinomial<'a> {
    frame: &'a ModelFrame,
    levels: usize,
}

impl Multinomial<'_> {
    fn probs(&self, beta: &DVector<f64>, r: usize) -> Vec<f64> {
        let q = self.frame.n_coef();
        let mut eta = vec![0.0; self.levels];
        for l in 1..self.levels {
            eta[l] = (0..q).map(|j| beta[(l - 1) * q + j] * self.frame.x[(r, j)]).sum();
        }
        softmax(&eta)
    }
}

fn softmax(eta: &[f64]) -> Vec<f64> {
    let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Objective for Multinomial<'_> {
    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        (0..self.frame.n_rows())
            .map(|r| self.probs(beta, r)[self.frame.y[r] as usize].max(f64::MIN_POSITIVE).ln())
            .sum()
    }

    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let q = self.frame.n_coef();
        let d = (self.levels - 1) * q;
        let mut ll = 0.0;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for r in 0..self.frame.n_rows() {
            let p = self.probs(beta, r);
            let y = self.frame.y[r] as usize;
            ll += p[y].max(f64::MIN_POSITIVE).ln();
            let x = self.frame.x.row(r);
            for l in 1..self.levels {
                let resid = (y == l) as u8 as f64 - p[l];
                for j in 0..q {
                    g[(l - 1) * q + j] += resid * x[j];
                }
                for m in 1..self.levels {
                    let c = p[l] * ((l == m) as u8 as f64 - p[m]);
                    for j in 0..q {
                        for k in 0..q {
                            h[((l - 1) * q + j, (m - 1) * q + k)] += c * x[j] * x[k];
                        }
                    }
                }
            }
        }
        (ll, g, h)
    }
}

fn draw_multinomial(f: &ModelFrame, levels: usize, rng: &mut Rng) -> Result<ImputerDraw> {
    let obj = Multinomial { frame: f, levels };
    let d = (levels - 1) * f.n_coef();
    let out = newton_raphson(&obj, DVector::zeros(d), SCORE_TOL)?;
    let cov = spd_inverse(&out.information)?;
    Ok(ImputerDraw {
        family: ImputerFamily::BayesMultinomial,
        coef: mvn_draw(&out.coef, &cov, rng)?,
        dispersion: None,
        levels,
    })
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draw one value from the imputation model's predictive distribution.
fn predictive_draw(draw: &ImputerDraw, x: &[f64], rng: &mut Rng) -> f64 {
    let q = x.len();
    let lin = |block: usize| -> f64 { (0..q).map(|j| draw.coef[block * q + j] * x[j]).sum() };
    match draw.family {
        ImputerFamily::BayesLinear => {
            let e: f64 = StandardNormal.sample(rng);
            lin(0) + draw.dispersion.expect("linear draw").sqrt() * e
        }
        ImputerFamily::BayesLogistic => {
            if rng.random::<f64>() < expit(lin(0)) {
                1.0
            } else {
                0.0
            }
        }
        ImputerFamily::BayesMultinomial => {
            let mut eta = vec![0.0; draw.levels];
            for (l, e) in eta.iter_mut().enumerate().skip(1) {
                *e = lin(l - 1);
            }
            let p = softmax(&eta);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (l, pl) in p.iter().enumerate() {
                acc += pl;
                if u < acc {
                    return l as f64;
                }
            }
            (draw.levels - 1) as f64
        }
    }
}

struct Plan {
    spec: ImputerSpec,
    target: usize,
    design: Design,
    observed: Vec<usize>,
    missing: Vec<usize>,
}

/// Produce `cfg.m` completed tables. Every imputation starts from draws of
/// each column's observed marginal, then runs `cfg.cycles` sweeps over the
/// incomplete columns. Each sweep refits the imputer on rows whose target
/// was originally observed, using the current completed predictors.
pub fn chained_impute(t: &Table, specs: &[ImputerSpec], cfg: &ChainConfig) -> Result<Vec<Table>> {
    if cfg.m < 2 {
        return Err(Error::Config("M must be at least 2".into()));
    }
    if cfg.cycles < 1 {
        return Err(Error::Config("cycles must be at least 1".into()));
    }
    let forbidden: Vec<String> = if cfg.outcome_as_predictor {
        Vec::new()
    } else {
        cfg.outcome_columns.clone()
    };
    for s in specs {
        s.validate(t, &forbidden)?;
        if cfg.outcome_columns.contains(&s.target) {
            return Err(Error::InvalidImputer {
                target: s.target.clone(),
                reason: "outcome columns are not imputed by chained equations".into(),
            });
        }
    }
    let mut targets = Vec::new();
    for s in specs {
        let c = t.column_index(&s.target)?;
        if targets.contains(&c) {
            return Err(Error::InvalidImputer {
                target: s.target.clone(),
                reason: "more than one spec".into(),
            });
        }
        targets.push(c);
    }
    for c in 0..t.n_cols() {
        let name = &t.columns()[c].name;
        if t.missing_count(c) > 0 && !targets.contains(&c) && !cfg.outcome_columns.contains(name) {
            return Err(Error::InvalidImputer {
                target: name.clone(),
                reason: "partially observed covariate has no imputation spec".into(),
            });
        }
    }
    for s in specs {
        for p in &s.predictors {
            let c = t.column_index(p)?;
            if t.missing_count(c) > 0 && !targets.contains(&c) {
                return Err(Error::IncompletePredictor(p.clone()));
            }
        }
    }

    let mut plans: Vec<Plan> = specs
        .iter()
        .map(|s| {
            let target = t.column_index(&s.target)?;
            let (observed, missing): (Vec<usize>, Vec<usize>) =
                (0..t.n_rows()).partition(|&r| t.is_observed(r, target));
            Ok(Plan {
                spec: s.clone(),
                target,
                design: Design::new(&s.design_spec(), t)?,
                observed,
                missing,
            })
        })
        .collect::<Result<_>>()?;
    plans.retain(|p| !p.missing.is_empty());
    match &cfg.visit_order {
        Some(order) => {
            let pos = |p: &Plan| order.iter().position(|n| *n == p.spec.target).unwrap_or(usize::MAX);
            plans.sort_by_key(|p| (pos(p), p.target));
        }
        None => plans.sort_by_key(|p| (p.missing.len(), p.target)),
    }
    if plans.is_empty() {
        return Ok(vec![t.without_truth(); cfg.m]);
    }

    (0..cfg.m)
        .into_par_iter()
        .map(|m| impute_once(t, &plans, cfg, rng::split_path(cfg.seed, &[rng::tag::IMPUTE, m as u64])))
        .collect()
}

fn impute_once(t: &Table, plans: &[Plan], cfg: &ChainConfig, seed: u64) -> Result<Table> {
    let mut work = t.without_truth();
    let mut rng = rng::stream(seed);
    for p in plans {
        let pool: Vec<f64> = p.observed.iter().map(|&r| t.value(r, p.target)).collect();
        if pool.is_empty() {
            return Err(Error::InsufficientRows {
                needed: 1,
                available: 0,
            });
        }
        for &r in &p.missing {
            let v = pool[rng.random_range(0..pool.len())];
            work.fill(r, p.target, v);
        }
    }
    let mut buf = Vec::new();
    for _ in 0..cfg.cycles {
        for p in plans {
            let draw = draw_on_rows(&work, &p.spec, &p.design, &p.observed, &mut rng).map_err(|e| {
                match e {
                    Error::InvalidImputer { .. } => e,
                    other => Error::InvalidImputer {
                        target: p.spec.target.clone(),
                        reason: other.to_string(),
                    },
                }
            })?;
            buf.resize(p.design.n_coef(), 0.0);
            for &r in &p.missing {
                p.design.eval_row(&work, r, &mut buf);
                let v = predictive_draw(&draw, &buf, &mut rng);
                work.fill(r, p.target, v);
            }
        }
    }
    Ok(work)
}

/// Draw missing outcome cells from `f(Y | X; params)` on a table whose
/// covariates are complete. Observed outcomes are left untouched.
pub fn impute_outcome(completed: &Table, outcome: &OutcomeSpec, params: &OutcomeParams, seed: u64) -> Result<Table> {
    let y = match (&outcome.response, outcome.family) {
        (Response::Single(y), Family::Gaussian | Family::Bernoulli) => completed.column_index(y)?,
        _ => return Err(Error::UnsupportedFamily(outcome.family.name().into())),
    };
    let design = Design::new(outcome, completed)?;
    if params.coef.len() != design.n_coef() {
        return Err(Error::Dimension("coefficient length does not match design".into()));
    }
    let covariates: Vec<usize> = outcome
        .main_effects
        .iter()
        .map(|m| completed.column_index(m))
        .collect::<Result<_>>()?;
    let mut out = completed.without_truth();
    let mut rng = rng::stream(rng::split(seed, rng::tag::OUTCOME));
    let mut x = vec![0.0; design.n_coef()];
    for r in 0..completed.n_rows() {
        if completed.is_observed(r, y) {
            continue;
        }
        if let Some(&c) = covariates.iter().find(|&&c| !completed.is_observed(r, c)) {
            return Err(Error::MissingCell {
                row: r,
                column: completed.columns()[c].name.clone(),
            });
        }
        design.eval_row(completed, r, &mut x);
        let eta: f64 = x.iter().zip(params.coef.iter()).map(|(a, b)| a * b).sum();
        let v = match outcome.family {
            Family::Gaussian => {
                let s2 = params
                    .dispersion
                    .ok_or_else(|| Error::InvalidSpec("gaussian outcome imputation needs σ²".into()))?;
                let e: f64 = StandardNormal.sample(&mut rng);
                eta + s2.sqrt() * e
            }
            _ => {
                if rng.random::<f64>() < expit(eta) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        out.fill(r, y, v);
    }
    Ok(out)
}

/// Pick index `k` with probability proportional to `densities[k]`.
pub fn select_index(densities: &[f64], rng: &mut Rng) -> Option<usize> {
    let total: f64 = densities.iter().filter(|d| d.is_finite() && **d > 0.0).sum();
    if !(total > 0.0) || densities.iter().any(|d| *d < 0.0 || d.is_nan()) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (k, &d) in densities.iter().enumerate() {
        if d > 0.0 {
            acc += d;
            last = Some(k);
            if u < acc {
                return Some(k);
            }
        }
    }
    last
}

/// Build one completed table by choosing, for every subject, one of the
/// candidate tables with probability proportional to `densities[i][k]`.
pub fn multinomial_select(candidates: &[Table], densities: &[Vec<f64>], seed: u64) -> Result<Table> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Dimension("no candidate tables".into()))?;
    let n = first.n_rows();
    if densities.len() != n || densities.iter().any(|d| d.len() != candidates.len()) {
        return Err(Error::Dimension("density grid must be subjects × candidates".into()));
    }
    if candidates.iter().any(|c| c.n_rows() != n || c.columns() != first.columns()) {
        return Err(Error::Dimension("candidate tables differ in shape".into()));
    }
    let mut rng = rng::stream(rng::split(seed, rng::tag::SELECT));
    let mut out = first.without_truth();
    for (i, d) in densities.iter().enumerate() {
        let k = select_index(d, &mut rng).ok_or(Error::ZeroDensities(i))?;
        if k != 0 {
            for c in 0..out.n_cols() {
                if candidates[k].is_observed(i, c) {
                    out.fill(i, c, candidates[k].value(i, c));
                }
            }
        }
    }
    Ok(out)
}
