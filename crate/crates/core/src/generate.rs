//! Synthetic study scenarios and missingness mechanisms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::table::{Column, ColumnRole, Table};

/// One of the four simulation designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Gaussian outcome, missingness in `x2`.
    Linear = 1,
    /// Binary outcome, missingness in `x2` and `x3`.
    Logistic = 2,
    /// Gaussian outcome with an `x1:x2` interaction.
    Interaction = 3,
    /// Censored exponential survival.
    Survival = 4,
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::Linear),
            2 => Ok(Self::Logistic),
            3 => Ok(Self::Interaction),
            4 => Ok(Self::Survival),
            _ => Err(Error::InvalidScenario(id)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioId {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn id(self) -> u8 {
        self as u8
    }

    /// Covariate covariance matrix.
    pub fn covariance(self) -> DMatrix<f64> {
        match self {
            Self::Linear => DMatrix::from_row_slice(2, 2, &[0.49, 0.12, 0.12, 0.09]),
            Self::Logistic => DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 0.3, 0.3, 0.3, 1.0, 0.3, 0.3, 0.3, 1.0],
            ),
            Self::Interaction => DMatrix::from_row_slice(2, 2, &[0.81, 0.59, 0.59, 1.21]),
            Self::Survival => DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        }
    }

    pub fn covariate_names(self) -> Vec<&'static str> {
        match self {
            Self::Logistic => vec!["x1", "x2", "x3"],
            _ => vec!["x1", "x2"],
        }
    }

    /// Columns of the generated table, covariates first.
    pub fn columns(self) -> Vec<Column> {
        let mut cols: Vec<Column> = self
            .covariate_names()
            .into_iter()
            .map(|n| Column::new(n, ColumnRole::Continuous))
            .collect();
        match self {
            Self::Linear | Self::Interaction => cols.push(Column::new("y", ColumnRole::Continuous)),
            Self::Logistic => cols.push(Column::new("y", ColumnRole::Binary)),
            Self::Survival => {
                cols.push(Column::new("time", ColumnRole::EventTime));
                cols.push(Column::new("status", ColumnRole::EventIndicator));
            }
        }
        cols
    }

    /// Name of the column a missingness mechanism may use as "the outcome".
    pub fn outcome_column(self) -> &'static str {
        match self {
            Self::Survival => "time",
            _ => "y",
        }
    }

    /// The mechanism grid of the simulation study, as `(φ₀, φ₁, φ₂)`.
    pub fn mechanism_grid(self) -> Vec<[f64; 3]> {
        match self {
            Self::Linear | Self::Interaction => vec![
                [0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.0, 1.0, -1.0],
            ],
            Self::Logistic => vec![
                [0.5, 0.0, 0.0],
                [0.5, 1.0, 0.0],
                [0.5, 0.0, 1.0],
                [0.5, 1.0, -1.0],
            ],
            Self::Survival => vec![[0.5, 0.0, 0.0], [0.5, 1.0, 0.0]],
        }
    }

    /// Missingness mechanisms for one `φ`: a logit model for observing `x2`
    /// given `x1` and the outcome, plus 30% MCAR on `x3` in the logistic
    /// scenario.
    pub fn mechanisms(self, phi: [f64; 3]) -> Vec<MissingnessMechanism> {
        let mut predictors = Vec::new();
        if phi[1] != 0.0 {
            predictors.push(("x1".to_string(), phi[1]));
        }
        if phi[2] != 0.0 {
            predictors.push((self.outcome_column().to_string(), phi[2]));
        }
        let mut out = vec![MissingnessMechanism::mar_logit("x2", phi[0], predictors)];
        if self == Self::Logistic {
            out.push(MissingnessMechanism::mcar("x3", 0.7));
        }
        out
    }
}

/// Draw `n` rows from N(0, cov).
fn mvn_rows(cov: &DMatrix<f64>, n: usize, rng: &mut Rng) -> Result<Vec<DVector<f64>>> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidSpec("covariance is not positive definite".into()))?;
    let l = chol.l();
    let p = cov.nrows();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
            &l * z
        })
        .collect())
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generate a fully observed dataset for a scenario.
pub fn generate_scenario(s: ScenarioId) -> Result<Table> {
    let scenario = s.scenario;
    let mut rng = rng::stream(rng::split(s.seed, rng::tag::GENERATE));
    let xs = mvn_rows(&scenario.covariance(), s.n, &mut rng)?;
    let mut data: Vec<Vec<f64>> = vec![Vec::with_capacity(s.n); scenario.columns().len()];
    let p = xs.first().map_or(0, |x| x.len());
    for x in &xs {
        for j in 0..p {
            data[j].push(x[j]);
        }
    }
    match scenario {
        Scenario::Linear => {
            let noise = Normal::new(0.0, 0.55_f64.sqrt()).expect("valid sd");
            for x in &xs {
                data[2].push(0.53 * x[0] + 1.25 * x[1] + noise.sample(&mut rng));
            }
        }
        Scenario::Logistic => {
            for x in &xs {
                let eta = 0.5 + 0.5 * x[0] + 0.5 * x[1] + 0.5 * x[2];
                let y = if rng.random::<f64>() < expit(eta) { 1.0 } else { 0.0 };
                data[3].push(y);
            }
        }
        Scenario::Interaction => {
            for x in &xs {
                let e: f64 = StandardNormal.sample(&mut rng);
                data[2].push(x[0] + x[1] + x[0] * x[1] + e);
            }
        }
        Scenario::Survival => {
            let censor = Uniform::new(0.2, 3.0).expect("valid bounds");
            for x in &xs {
                let rate = (0.5 * x[0] + 0.5 * x[1]).exp();
                let t = Exp::new(rate).expect("positive rate").sample(&mut rng);
                let c = censor.sample(&mut rng);
                data[2].push(t.min(c));
                data[3].push(if t <= c { 1.0 } else { 0.0 });
            }
        }
    }
    Table::from_columns(scenario.columns(), data)
}

/// Observation model for one target column:
/// `P(observed) = expit(intercept + Σ slope·predictor)`.
/// With no predictors this is MCAR.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingnessMechanism {
    pub target: String,
    pub intercept: f64,
    pub predictors: Vec<(String, f64)>,
}

impl MissingnessMechanism {
    pub fn mcar(target: impl Into<String>, p_observed: f64) -> Self {
        let intercept = if p_observed >= 1.0 {
            f64::INFINITY
        } else if p_observed <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (p_observed / (1.0 - p_observed)).ln()
        };
        Self {
            target: target.into(),
            intercept,
            predictors: Vec::new(),
        }
    }

    pub fn mar_logit(
        target: impl Into<String>,
        intercept: f64,
        predictors: Vec<(String, f64)>,
    ) -> Self {
        Self {
            target: target.into(),
            intercept,
            predictors,
        }
    }

    pub fn is_mcar(&self) -> bool {
        self.predictors.is_empty()
    }
}

/// Mask cells independently per row with probability `1 − P(observed)`.
/// Predictors are read from the input table and must be fully observed.
pub fn apply_missingness(t: &Table, mechanisms: &[MissingnessMechanism], seed: u64) -> Result<Table> {
    let mut resolved = Vec::with_capacity(mechanisms.len());
    for mech in mechanisms {
        let target = t.column_index(&mech.target)?;
        let mut preds = Vec::with_capacity(mech.predictors.len());
        for (name, slope) in &mech.predictors {
            let c = t.column_index(name)?;
            if c == target {
                return Err(Error::InvalidMechanism(format!(
                    "`{name}` cannot predict its own missingness"
                )));
            }
            if t.missing_count(c) > 0 {
                return Err(Error::IncompletePredictor(name.clone()));
            }
            if !slope.is_finite() {
                return Err(Error::InvalidMechanism(format!("non-finite slope on `{name}`")));
            }
            preds.push((c, *slope));
        }
        if mech.intercept.is_nan() {
            return Err(Error::InvalidMechanism("NaN intercept".into()));
        }
        resolved.push((target, mech.intercept, preds));
    }

    let mut out = t.clone();
    let truth = t
        .truth()
        .map(|v| Arc::new(v.to_vec()))
        .unwrap_or_else(|| Arc::new(t.raw_values().to_vec()));
    for (k, (target, intercept, preds)) in resolved.iter().enumerate() {
        let mut rng = rng::stream(rng::split_path(seed, &[rng::tag::MASK, k as u64]));
        for r in 0..t.n_rows() {
            let eta = intercept + preds.iter().map(|&(c, b)| b * t.value(r, c)).sum::<f64>();
            let u: f64 = rng.random();
            if u >= expit(eta) {
                out.mask_cell(r, *target);
            }
        }
    }
    out.set_truth(truth);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn invalid_scenario_id() {
        assert!(matches!(Scenario::try_from(5), Err(Error::InvalidScenario(5))));
    }

    #[test]
    fn covariances_are_positive_definite() {
        for id in 1..=4u8 {
            let s = Scenario::try_from(id).unwrap();
            assert!(s.covariance().cholesky().is_some());
        }
    }

    #[test]
    fn scenario1_x2_variance() {
        let t = generate_scenario(ScenarioId { scenario: Scenario::Linear, n: 200_000, seed: 1 }).unwrap();
        let v = sample_var(&t.column_values(1));
        assert!((v - 0.09).abs() < 0.002, "{v}");
    }

    #[test]
    fn scenario2_pairwise_correlation() {
        let t = generate_scenario(ScenarioId { scenario: Scenario::Logistic, n: 200_000, seed: 2 }).unwrap();
        let r = corr(&t.column_values(0), &t.column_values(1));
        assert!((r - 0.3).abs() < 0.01, "{r}");
    }

    #[test]
    fn scenario4_outputs_valid_survival_columns() {
        let t = generate_scenario(ScenarioId { scenario: Scenario::Survival, n: 2000, seed: 3 }).unwrap();
        let times = t.column_values(2);
        assert!(times.iter().all(|&x| x > 0.0 && x <= 3.0));
        let events: f64 = t.column_values(3).iter().sum();
        assert!(events > 0.0 && events < 2000.0);
    }

    #[test]
    fn half_missing_under_zero_phi() {
        let s = Scenario::Linear;
        let t = generate_scenario(ScenarioId { scenario: s, n: 100_000, seed: 4 }).unwrap();
        let m = apply_missingness(&t, &s.mechanisms([0.0, 0.0, 0.0]), 9).unwrap();
        let frac = m.missing_count(1) as f64 / 100_000.0;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn always_observed_is_identity() {
        let t = generate_scenario(ScenarioId { scenario: Scenario::Linear, n: 500, seed: 5 }).unwrap();
        let m = apply_missingness(&t, &[MissingnessMechanism::mcar("x2", 1.0)], 1).unwrap();
        assert_eq!(m, t);
    }

    #[test]
    fn scenario2_complete_case_fraction() {
        let s = Scenario::Logistic;
        let t = generate_scenario(ScenarioId { scenario: s, n: 50_000, seed: 6 }).unwrap();
        let m = apply_missingness(&t, &s.mechanisms([0.5, 0.0, 0.0]), 2).unwrap();
        let frac = m.complete_case_count() as f64 / 50_000.0;
        // independent mechanisms: P(x2 observed) · P(x3 observed)
        let expected = 0.7 / (1.0 + (-0.5_f64).exp());
        assert!((frac - expected).abs() < 0.01, "{frac} vs {expected}");
        assert!((frac - 0.4).abs() < 0.05, "roughly 40% complete: {frac}");
    }

    #[test]
    fn incomplete_predictor_rejected() {
        let s = Scenario::Linear;
        let t = generate_scenario(ScenarioId { scenario: s, n: 100, seed: 7 }).unwrap();
        let m = apply_missingness(&t, &s.mechanisms([0.0, 0.0, 0.0]), 2).unwrap();
        let mech = MissingnessMechanism::mar_logit("y", 0.0, vec![("x2".into(), 1.0)]);
        assert!(matches!(apply_missingness(&m, &[mech], 3), Err(Error::IncompletePredictor(_))));
        let own = MissingnessMechanism::mar_logit("x2", 0.0, vec![("x2".into(), 1.0)]);
        assert!(apply_missingness(&t, &[own], 3).is_err());
    }

    #[test]
    fn masking_keeps_observed_cells_and_truth() {
        let s = Scenario::Linear;
        let t = generate_scenario(ScenarioId { scenario: s, n: 300, seed: 8 }).unwrap();
        let m = apply_missingness(&t, &s.mechanisms([0.0, 1.0, -1.0]), 4).unwrap();
        for r in 0..300 {
            for c in 0..3 {
                if m.is_observed(r, c) {
                    assert_eq!(m.value(r, c).to_bits(), t.value(r, c).to_bits());
                }
            }
        }
        assert_eq!(m.truth().unwrap(), t.raw_values());
        let again = apply_missingness(&t, &s.mechanisms([0.0, 1.0, -1.0]), 4).unwrap();
        assert_eq!(again, m);
        let other = apply_missingness(&t, &s.mechanisms([0.0, 1.0, -1.0]), 5).unwrap();
        assert_ne!(other, m);
    }
}
