//! Weighted maximum-likelihood fitting of the analysis model.
//!
//! Three families are supported: Gaussian with identity link, Bernoulli with
//! logit link, and Cox proportional hazards (Breslow ties). Every fit exposes
//! per-row score and information contributions, which the variance
//! estimators consume.

mod baseline;
mod check;
mod cox;
mod design;
mod glm;
pub(crate) mod newton;

pub use baseline::{breslow_baseline, BaselineHazard};
pub use check::{finite_diff_check, FdReport};
pub use design::{Design, ModelFrame};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::table::{ColumnRole, Table};
use newton::Objective as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Bernoulli,
    Cox,
}

impl Family {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" | "gaussian-identity" => Some(Self::Gaussian),
            "bernoulli" | "bernoulli-logit" | "binomial" | "logistic" => Some(Self::Bernoulli),
            "cox" | "cox-ph" => Some(Self::Cox),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian-identity",
            Self::Bernoulli => "bernoulli-logit",
            Self::Cox => "cox-ph",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Single(String),
    Survival { time: String, status: String },
}

impl Response {
    pub fn columns(&self) -> Vec<&str> {
        match self {
            Self::Single(y) => vec![y.as_str()],
            Self::Survival { time, status } => vec![time.as_str(), status.as_str()],
        }
    }
}

/// The analysis model `f(Y | X; θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeSpec {
    pub family: Family,
    pub response: Response,
    pub main_effects: Vec<String>,
    pub interactions: Vec<(String, String)>,
    /// Ignored (forced off) for Cox models.
    pub intercept: bool,
}

impl OutcomeSpec {
    pub fn new(family: Family, response: Response, main_effects: Vec<String>) -> Self {
        Self {
            family,
            response,
            main_effects,
            interactions: Vec::new(),
            intercept: family != Family::Cox,
        }
    }

    pub fn with_interaction(mut self, a: &str, b: &str) -> Self {
        self.interactions.push((a.to_string(), b.to_string()));
        self
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept && self.family != Family::Cox
    }

    /// Check references and response roles against a table's columns.
    pub fn validate(&self, t: &Table) -> Result<()> {
        for (a, b) in &self.interactions {
            if !self.main_effects.contains(a) || !self.main_effects.contains(b) {
                return Err(Error::InvalidSpec(format!(
                    "interaction {a}:{b} must reference main effects"
                )));
            }
        }
        for m in &self.main_effects {
            t.column_index(m)?;
            if self.response.columns().contains(&m.as_str()) {
                return Err(Error::InvalidSpec(format!("`{m}` is both response and covariate")));
            }
        }
        match (&self.response, self.family) {
            (Response::Survival { time, status }, Family::Cox) => {
                if t.role(t.column_index(time)?) != ColumnRole::EventTime {
                    return Err(Error::InvalidSpec(format!("`{time}` must be an event-time column")));
                }
                if t.role(t.column_index(status)?) != ColumnRole::EventIndicator {
                    return Err(Error::InvalidSpec(format!(
                        "`{status}` must be an event-indicator column"
                    )));
                }
            }
            (Response::Single(y), Family::Gaussian | Family::Bernoulli) => {
                let c = t.column_index(y)?;
                if self.family == Family::Bernoulli
                    && !matches!(t.role(c), ColumnRole::Binary | ColumnRole::EventIndicator)
                {
                    return Err(Error::InvalidSpec(format!("`{y}` must be binary")));
                }
            }
            _ => {
                return Err(Error::InvalidSpec(
                    "cox-ph requires (time, status); other families a single response".into(),
                ))
            }
        }
        Ok(())
    }

    /// Table columns referenced by the model (response first).
    pub fn columns(&self, t: &Table) -> Result<Vec<usize>> {
        self.response
            .columns()
            .into_iter()
            .chain(self.main_effects.iter().map(String::as_str))
            .map(|n| t.column_index(n))
            .collect()
    }
}

/// Parameters needed to evaluate `f(Y | X; θ)`.
#[derive(Clone, Debug)]
pub struct OutcomeParams {
    pub coef: DVector<f64>,
    /// Gaussian residual variance.
    pub dispersion: Option<f64>,
    /// Cox baseline hazard.
    pub baseline: Option<BaselineHazard>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub family: Family,
    pub names: Vec<String>,
    pub coef: DVector<f64>,
    /// Gaussian only: weighted RSS / Σw.
    pub dispersion: Option<f64>,
    /// Per-row score contributions `U_r` (row `r` of the matrix), unweighted.
    pub scores: DMatrix<f64>,
    /// Per-row information contributions `J_r`, flattened `q × q` blocks.
    info: Vec<f64>,
    /// `Σ_r w_r J_r`.
    pub information: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn n_coef(&self) -> usize {
        self.coef.len()
    }

    pub fn n_rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn info_row(&self, r: usize) -> DMatrix<f64> {
        let q = self.n_coef();
        DMatrix::from_column_slice(q, q, &self.info[r * q * q..(r + 1) * q * q])
    }

    pub(crate) fn info_slice(&self, r: usize) -> &[f64] {
        let q = self.n_coef();
        &self.info[r * q * q..(r + 1) * q * q]
    }

    /// `Σ_r w_r U_r`.
    pub fn weighted_score(&self, w: &[f64]) -> DVector<f64> {
        let q = self.n_coef();
        let mut s = DVector::zeros(q);
        for (r, &wr) in w.iter().enumerate() {
            for j in 0..q {
                s[j] += wr * self.scores[(r, j)];
            }
        }
        s
    }

    /// Model-based covariance `(Σ w J)⁻¹`.
    pub fn model_covariance(&self) -> Result<DMatrix<f64>> {
        crate::linalg::spd_inverse(&self.information)
    }

    pub fn params(&self) -> OutcomeParams {
        OutcomeParams {
            coef: self.coef.clone(),
            dispersion: self.dispersion,
            baseline: None,
        }
    }
}

pub(crate) fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::InvalidWeights(format!("{} weights for {} rows", w.len(), n)));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    if !w.iter().any(|&x| x > 0.0) {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    Ok(())
}

/// Fit `spec` to every row of `data` with row weights `w`.
pub fn fit_weighted(data: &Table, spec: &OutcomeSpec, w: &[f64]) -> Result<FitResult> {
    spec.validate(data)?;
    let design = Design::new(spec, data)?;
    let frame = ModelFrame::build(&design, spec, data, None)?;
    fit_frame(&frame, w)
}

/// Fit on a prebuilt frame.
pub fn fit_frame(frame: &ModelFrame, w: &[f64]) -> Result<FitResult> {
    check_weights(w, frame.n_rows())?;
    match frame.family {
        Family::Gaussian => glm::fit_gaussian(frame, w),
        Family::Bernoulli => glm::fit_bernoulli(frame, w),
        Family::Cox => cox::fit_cox(frame, w),
    }
}

/// Weighted log-likelihood at `coef` (Gaussian: at the given dispersion;
/// Cox: Breslow partial likelihood).
pub fn loglik(frame: &ModelFrame, w: &[f64], coef: &DVector<f64>, dispersion: Option<f64>) -> f64 {
    match frame.family {
        Family::Gaussian => glm::gaussian_loglik(frame, w, coef, dispersion.unwrap_or(1.0)),
        Family::Bernoulli => glm::bernoulli_eval(frame, w, coef, false).0,
        Family::Cox => cox::CoxObjective::new(frame, w).loglik(coef),
    }
}

/// Weighted score and information (`−∂² loglik`) at `coef`.
pub fn score_and_information(
    frame: &ModelFrame,
    w: &[f64],
    coef: &DVector<f64>,
    dispersion: Option<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    match frame.family {
        Family::Gaussian => glm::gaussian_derivs(frame, w, coef, dispersion.unwrap_or(1.0)),
        Family::Bernoulli => {
            let (_, g, h) = glm::bernoulli_eval(frame, w, coef, true);
            (g, h.expect("requested"))
        }
        Family::Cox => {
            let (_, g, h) = cox::CoxObjective::new(frame, w).evaluate(coef);
            (g, h)
        }
    }
}

/// Per-row score and information contributions at arbitrary parameters.
pub fn contributions(
    frame: &ModelFrame,
    w: &[f64],
    coef: &DVector<f64>,
    dispersion: Option<f64>,
) -> (DMatrix<f64>, Vec<f64>) {
    match frame.family {
        Family::Gaussian => glm::gaussian_contributions(frame, coef, dispersion.unwrap_or(1.0)),
        Family::Bernoulli => glm::bernoulli_contributions(frame, coef),
        Family::Cox => cox::CoxObjective::new(frame, w).contributions(coef),
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log f(Y | X; θ)` for every row of `frame`.
pub fn log_densities(frame: &ModelFrame, params: &OutcomeParams) -> Result<Vec<f64>> {
    let q = frame.n_coef();
    if params.coef.len() != q {
        return Err(Error::Dimension(format!(
            "{} coefficients for a {q}-column design",
            params.coef.len()
        )));
    }
    let eta = &frame.x * &params.coef;
    match frame.family {
        Family::Gaussian => {
            let s2 = params
                .dispersion
                .filter(|s| *s > 0.0 && s.is_finite())
                .ok_or_else(|| Error::InvalidSpec("gaussian density needs σ² > 0".into()))?;
            let c = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
            Ok(eta
                .iter()
                .zip(&frame.y)
                .map(|(e, y)| c - (y - e).powi(2) / (2.0 * s2))
                .collect())
        }
        Family::Bernoulli => Ok(eta
            .iter()
            .zip(&frame.y)
            .map(|(&e, &y)| if y > 0.5 { log_sigmoid(e) } else { log_sigmoid(-e) })
            .collect()),
        Family::Cox => {
            let base = params
                .baseline
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec("cox density needs a baseline hazard".into()))?;
            let mut out = Vec::with_capacity(frame.n_rows());
            for (r, &e) in eta.iter().enumerate() {
                let t = frame.y[r];
                let event = frame.status[r] > 0.5;
                let cum = base.cumulative(t);
                let mut ld = -cum * e.exp();
                if event {
                    let rate = base.rate(t).ok_or(Error::BaselineSupport(t))?;
                    ld += rate.ln() + e;
                }
                out.push(if ld.is_nan() { f64::NEG_INFINITY } else { ld });
            }
            Ok(out)
        }
    }
}

/// `f(Y | X; θ)` for one table row.
pub fn density(spec: &OutcomeSpec, params: &OutcomeParams, table: &Table, row: usize) -> Result<f64> {
    let design = Design::new(spec, table)?;
    let frame = ModelFrame::build(&design, spec, table, Some(&[row]))?;
    Ok(log_densities(&frame, params)?[0].exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;

    fn gaussian_table(x: &[f64], y: &[f64]) -> Table {
        Table::from_columns(
            vec![
                Column::new("x", ColumnRole::Continuous),
                Column::new("y", ColumnRole::Continuous),
            ],
            vec![x.to_vec(), y.to_vec()],
        )
        .unwrap()
    }

    #[test]
    fn gaussian_density_at_mode() {
        let t = gaussian_table(&[2.0], &[3.0]);
        let spec = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["x".into()]);
        let params = OutcomeParams {
            coef: DVector::from_vec(vec![1.0, 1.0]),
            dispersion: Some(1.0),
            baseline: None,
        };
        let d = density(&spec, &params, &t, 0).unwrap();
        assert!((d - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_density_half() {
        let t = Table::from_columns(
            vec![
                Column::new("x", ColumnRole::Continuous),
                Column::new("y", ColumnRole::Binary),
            ],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap();
        let spec = OutcomeSpec::new(Family::Bernoulli, Response::Single("y".into()), vec!["x".into()]);
        let params = OutcomeParams {
            coef: DVector::from_vec(vec![0.0, 3.0]),
            dispersion: None,
            baseline: None,
        };
        assert!((density(&spec, &params, &t, 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cox_censored_density_is_survival() {
        let t = Table::from_columns(
            vec![
                Column::new("x", ColumnRole::Continuous),
                Column::new("time", ColumnRole::EventTime),
                Column::new("status", ColumnRole::EventIndicator),
            ],
            vec![vec![0.0], vec![1.0], vec![0.0]],
        )
        .unwrap();
        let spec = OutcomeSpec::new(
            Family::Cox,
            Response::Survival {
                time: "time".into(),
                status: "status".into(),
            },
            vec!["x".into()],
        );
        let params = OutcomeParams {
            coef: DVector::from_vec(vec![0.4]),
            dispersion: None,
            baseline: Some(BaselineHazard::from_steps(vec![1.0], vec![0.693]).unwrap()),
        };
        let d = density(&spec, &params, &t, 0).unwrap();
        assert!((d - (-0.693f64).exp()).abs() < 1e-12);
        assert!((d - 0.5).abs() < 1e-3);
    }

    #[test]
    fn gaussian_density_requires_dispersion() {
        let t = gaussian_table(&[1.0], &[1.0]);
        let spec = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["x".into()]);
        let params = OutcomeParams {
            coef: DVector::from_vec(vec![0.0, 0.0]),
            dispersion: None,
            baseline: None,
        };
        assert!(density(&spec, &params, &t, 0).is_err());
    }

    #[test]
    fn log_densities_finite_for_extreme_predictors() {
        let t = Table::from_columns(
            vec![
                Column::new("x", ColumnRole::Continuous),
                Column::new("y", ColumnRole::Binary),
            ],
            vec![vec![800.0, -800.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let spec = OutcomeSpec::new(Family::Bernoulli, Response::Single("y".into()), vec!["x".into()]);
        let design = Design::new(&spec, &t).unwrap();
        let frame = ModelFrame::build(&design, &spec, &t, None).unwrap();
        let params = OutcomeParams {
            coef: DVector::from_vec(vec![0.0, 1.0]),
            dispersion: None,
            baseline: None,
        };
        let ld = log_densities(&frame, &params).unwrap();
        assert!(ld.iter().all(|v| v.is_finite()));
        assert!((ld[0] + 800.0).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        let t = gaussian_table(&[1.0], &[1.0]);
        let bad = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["x".into()])
            .with_interaction("x", "z");
        assert!(bad.validate(&t).is_err());
        let cox = OutcomeSpec::new(Family::Cox, Response::Single("y".into()), vec!["x".into()]);
        assert!(cox.validate(&t).is_err());
    }
}
