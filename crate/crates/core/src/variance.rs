//! Variance estimators for the weighted stacked fit and the comparators.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{clipped_inverse, min_eigenvalue, spd_inverse, symmetrize};
use crate::models::{Design, FitResult, OutcomeSpec};
use crate::stack::StackedTable;
use crate::table::Table;

fn sym(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Eigenvalue floor used when the observed information is not positive
/// definite.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Normal quantile for 95% intervals.
pub const Z95: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarianceMethod {
    Louis,
    Sandwich,
    Wood,
    Rubin,
    /// Inverse information of a single fit.
    Model,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Louis => "louis",
            Self::Sandwich => "sandwich",
            Self::Wood => "wood",
            Self::Rubin => "rubin",
            Self::Model => "model",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "louis" => Some(Self::Louis),
            "sandwich" => Some(Self::Sandwich),
            "wood" => Some(Self::Wood),
            "rubin" => Some(Self::Rubin),
            "model" => Some(Self::Model),
            _ => None,
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct VarianceReport {
    pub method: VarianceMethod,
    pub names: Vec<String>,
    pub estimate: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub se: DVector<f64>,
    /// The information matrix was not positive definite and its eigenvalues
    /// were clipped before inversion.
    pub clipped: bool,
}

impl VarianceReport {
    fn new(method: VarianceMethod, names: Vec<String>, estimate: DVector<f64>, cov: DMatrix<f64>, clipped: bool) -> Self {
        let cov = sym(cov);
        let se = DVector::from_iterator(cov.nrows(), cov.diagonal().iter().map(|v| v.max(0.0).sqrt()));
        Self {
            method,
            names,
            estimate,
            cov,
            se,
            clipped,
        }
    }

    pub fn ci(&self, j: usize) -> (f64, f64) {
        (self.estimate[j] - Z95 * self.se[j], self.estimate[j] + Z95 * self.se[j])
    }

    pub fn covers(&self, j: usize, truth: f64) -> bool {
        let (lo, hi) = self.ci(j);
        lo <= truth && truth <= hi
    }
}

/// Write `coefficient,estimate,se,ci_low,ci_high,method` rows for each report.
pub fn write_reports<W: Write>(writer: W, reports: &[VarianceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["coefficient", "estimate", "se", "ci_low", "ci_high", "method"])?;
    for r in reports {
        for (j, name) in r.names.iter().enumerate() {
            let (lo, hi) = r.ci(j);
            w.write_record([
                name.clone(),
                format!("{}", r.estimate[j]),
                format!("{}", r.se[j]),
                format!("{lo}"),
                format!("{hi}"),
                r.method.name().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn check_fit(s: &StackedTable, fit: &FitResult) -> Result<()> {
    if fit.n_rows() != s.n_rows() {
        return Err(Error::Dimension(format!(
            "fit has {} rows, stack has {}",
            fit.n_rows(),
            s.n_rows()
        )));
    }
    Ok(())
}

/// `Σ_r w_r J_r`.
fn complete_information(fit: &FitResult, w: &[f64]) -> DMatrix<f64> {
    let q = fit.n_coef();
    let mut a = DMatrix::zeros(q, q);
    for (r, &wr) in w.iter().enumerate() {
        if wr != 0.0 {
            let block = fit.info_slice(r);
            for (k, v) in a.iter_mut().enumerate() {
                *v += wr * block[k];
            }
        }
    }
    sym(a)
}

fn score_row(fit: &FitResult, r: usize) -> DVector<f64> {
    fit.scores.row(r).transpose()
}

/// Complete-data information, missing information, and observed
/// information `I_obs = I_com − I_mis`, with per-subject centering of the
/// scores at their weighted mean.
pub fn louis_information(s: &StackedTable, fit: &FitResult) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_fit(s, fit)?;
    let w = s.weights()?;
    let q = fit.n_coef();
    let i_com = complete_information(fit, w);
    let mut i_mis = DMatrix::zeros(q, q);
    for i in 0..s.n_subjects() {
        let rows = s.rows_of(i);
        if rows.len() < 2 {
            continue;
        }
        let total: f64 = rows.iter().map(|&r| w[r]).sum();
        if !(total > 0.0) {
            continue;
        }
        let mut ubar = DVector::zeros(q);
        for &r in rows {
            ubar += score_row(fit, r) * (w[r] / total);
        }
        for &r in rows {
            let d = score_row(fit, r) - &ubar;
            i_mis += &d * d.transpose() * w[r];
        }
    }
    Ok((i_com, sym(i_mis)))
}

/// Louis-principle covariance `(I_com − I_mis)⁻¹`.
pub fn louis_variance(s: &StackedTable, fit: &FitResult) -> Result<VarianceReport> {
    let (i_com, i_mis) = louis_information(s, fit)?;
    let i_obs = sym(i_com - i_mis);
    let (cov, clipped) = match spd_inverse(&i_obs) {
        Ok(c) if min_eigenvalue(&i_obs) > EIGEN_FLOOR => (c, false),
        _ => {
            let (c, _) = clipped_inverse(&i_obs, EIGEN_FLOOR);
            (c, true)
        }
    };
    Ok(VarianceReport::new(VarianceMethod::Louis, fit.names.clone(), fit.coef.clone(), cov, clipped))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cluster {
    /// One cluster per subject: `g_i = Σ_m w_im U_im`.
    Subject,
    /// Every stacked row is its own cluster, treating imputations as
    /// independent observations.
    Row,
}

impl Cluster {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subject" => Some(Self::Subject),
            "row" => Some(Self::Row),
            _ => None,
        }
    }
}

/// Sandwich covariance `A⁻¹ B A⁻¹`.
pub fn sandwich_variance(s: &StackedTable, fit: &FitResult, cluster: Cluster) -> Result<VarianceReport> {
    check_fit(s, fit)?;
    let w = s.weights()?;
    let q = fit.n_coef();
    let a_inv = spd_inverse(&complete_information(fit, w))?;
    let mut b = DMatrix::zeros(q, q);
    match cluster {
        Cluster::Subject => {
            for i in 0..s.n_subjects() {
                let mut g = DVector::zeros(q);
                for &r in s.rows_of(i) {
                    g += score_row(fit, r) * w[r];
                }
                b += &g * g.transpose();
            }
        }
        Cluster::Row => {
            for (r, &wr) in w.iter().enumerate() {
                let g = score_row(fit, r) * wr;
                b += &g * g.transpose();
            }
        }
    }
    let cov = &a_inv * b * &a_inv;
    Ok(VarianceReport::new(VarianceMethod::Sandwich, fit.names.clone(), fit.coef.clone(), cov, false))
}

/// Per-column fraction of subjects with the column missing.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingFractions {
    pub fractions: Vec<f64>,
}

impl MissingFractions {
    pub fn from_table(t: &Table) -> Self {
        let n = t.n_rows().max(1) as f64;
        Self {
            fractions: (0..t.n_cols()).map(|c| t.missing_count(c) as f64 / n).collect(),
        }
    }

    /// Scale factor `1 / (1 − f)` for each design coefficient. A coefficient
    /// built from several columns uses the largest fraction among them; the
    /// intercept is not scaled.
    pub fn coefficient_factors(&self, design: &Design) -> Result<Vec<f64>> {
        (0..design.n_coef())
            .map(|j| {
                let f = design
                    .sources(j)
                    .iter()
                    .map(|&c| self.fractions.get(c).copied().unwrap_or(0.0))
                    .fold(0.0, f64::max);
                if f >= 1.0 {
                    Err(Error::FullyMissing(design.names()[j].clone()))
                } else {
                    Ok(1.0 / (1.0 - f))
                }
            })
            .collect()
    }
}

/// Model-based covariance `(Σ w J)⁻¹` with the diagonal of coefficient `j`
/// scaled by `c_j = 1/(1 − f_j)` and off-diagonals by `√(c_j c_k)`.
pub fn wood_variance(
    s: &StackedTable,
    fit: &FitResult,
    spec: &OutcomeSpec,
    f: &MissingFractions,
) -> Result<VarianceReport> {
    check_fit(s, fit)?;
    let w = s.weights()?;
    let design = Design::new(spec, s.table())?;
    if design.n_coef() != fit.n_coef() {
        return Err(Error::Dimension("design does not match fit".into()));
    }
    let c = f.coefficient_factors(&design)?;
    let v = spd_inverse(&complete_information(fit, w))?;
    let cov = DMatrix::from_fn(v.nrows(), v.ncols(), |j, k| v[(j, k)] * (c[j] * c[k]).sqrt());
    Ok(VarianceReport::new(VarianceMethod::Wood, fit.names.clone(), fit.coef.clone(), cov, false))
}

/// Inverse information of a single unweighted (or weighted) fit.
pub fn model_variance(fit: &FitResult) -> Result<VarianceReport> {
    Ok(VarianceReport::new(
        VarianceMethod::Model,
        fit.names.clone(),
        fit.coef.clone(),
        fit.model_covariance()?,
        false,
    ))
}

/// Rubin's rules: pooled mean and `W̄ + (1 + 1/M) B`.
pub fn rubin_combine(names: Vec<String>, fits: &[(DVector<f64>, DMatrix<f64>)]) -> Result<VarianceReport> {
    let m = fits.len();
    if m < 2 {
        return Err(Error::Dimension("Rubin's rules need at least two imputations".into()));
    }
    let q = fits[0].0.len();
    if names.len() != q || fits.iter().any(|(c, v)| c.len() != q || v.shape() != (q, q)) {
        return Err(Error::Dimension("imputation fits differ in dimension".into()));
    }
    let mf = m as f64;
    let mean = fits.iter().fold(DVector::zeros(q), |acc, (c, _)| acc + c) / mf;
    let within = fits.iter().fold(DMatrix::zeros(q, q), |acc, (_, v)| acc + v) / mf;
    let mut between = DMatrix::zeros(q, q);
    for (c, _) in fits {
        let d = c - &mean;
        between += &d * d.transpose();
    }
    between /= mf - 1.0;
    let cov = within + between * (1.0 + 1.0 / mf);
    Ok(VarianceReport::new(VarianceMethod::Rubin, names, mean, cov, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{apply_missingness, generate_scenario, Scenario, ScenarioId};
    use crate::impute::{chained_impute, ChainConfig, ImputerFamily, ImputerSpec};
    use crate::linalg::rel_frobenius;
    use crate::models::{fit_weighted, Family, Response};
    use crate::stack::{complete_case_fit, compute_weights, stack, unit_mi_weights, StackMode, WeightMode};

    fn spec1() -> OutcomeSpec {
        OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["x1".into(), "x2".into()])
    }

    #[test]
    fn rubin_arithmetic() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let fits: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&c| (DVector::from_element(1, c), one.clone()))
            .collect();
        let r = rubin_combine(vec!["b".into()], &fits).unwrap();
        assert!((r.estimate[0] - 2.0).abs() < 1e-15);
        assert!((r.cov[(0, 0)] - 7.0 / 3.0).abs() < 1e-14);

        let same = vec![(DVector::from_element(1, 1.5), one.clone()); 4];
        let r = rubin_combine(vec!["b".into()], &same).unwrap();
        assert_eq!(r.cov[(0, 0)], 1.0);
        assert!(rubin_combine(vec!["b".into()], &same[..1]).is_err());
    }

    #[test]
    fn louis_reduces_without_missing_data() {
        let t = generate_scenario(ScenarioId { scenario: Scenario::Linear, n: 200, seed: 3 }).unwrap();
        let s = unit_mi_weights(&stack(&t, &[t.clone(), t.clone(), t.clone()], StackMode::Tall).unwrap());
        let fit = fit_weighted(s.table(), &spec1(), s.weights().unwrap()).unwrap();
        let l = louis_variance(&s, &fit).unwrap();
        let full = fit_weighted(&t, &spec1(), &vec![1.0; 200]).unwrap();
        assert!(rel_frobenius(&l.cov, &full.model_covariance().unwrap()) < 1e-10);
        assert!(!l.clipped);
    }

    fn weighted_instance(seed: u64) -> (Table, StackedTable, FitResult) {
        let sc = Scenario::Linear;
        let t = generate_scenario(ScenarioId { scenario: sc, n: 300, seed }).unwrap();
        let m = apply_missingness(&t, &sc.mechanisms([0.0, 1.0, 0.0]), seed).unwrap();
        let specs = vec![ImputerSpec::new("x2", &["x1"], ImputerFamily::BayesLinear)];
        let mut cfg = ChainConfig::new(10, seed).with_outcome(&["y"]);
        cfg.cycles = 2;
        let imps = chained_impute(&m, &specs, &cfg).unwrap();
        let cc = complete_case_fit(&m, &spec1()).unwrap();
        let s = compute_weights(&stack(&m, &imps, StackMode::Tall).unwrap(), &cc, &spec1(), WeightMode::Mle, 1)
            .unwrap()
            .0;
        let fit = fit_weighted(s.table(), &spec1(), s.weights().unwrap()).unwrap();
        (m, s, fit)
    }

    #[test]
    fn louis_exceeds_complete_information_inverse() {
        let (_, s, fit) = weighted_instance(4);
        let l = louis_variance(&s, &fit).unwrap();
        let naive = fit.model_covariance().unwrap();
        for j in 0..3 {
            assert!(l.cov[(j, j)] >= naive[(j, j)]);
        }
        let sw = sandwich_variance(&s, &fit, Cluster::Subject).unwrap();
        assert!(sw.cov.trace() > 0.0);
    }

    #[test]
    fn wood_scaling() {
        let (m, s, fit) = weighted_instance(6);
        let zero = MissingFractions {
            fractions: vec![0.0; 3],
        };
        let v0 = wood_variance(&s, &fit, &spec1(), &zero).unwrap();
        assert!(rel_frobenius(&v0.cov, &fit.model_covariance().unwrap()) < 1e-12);
        let half = MissingFractions {
            fractions: vec![0.0, 0.5, 0.0],
        };
        let v = wood_variance(&s, &fit, &spec1(), &half).unwrap();
        assert!((v.cov[(2, 2)] / v0.cov[(2, 2)] - 2.0).abs() < 1e-12);
        assert!((v.cov[(1, 1)] / v0.cov[(1, 1)] - 1.0).abs() < 1e-12);
        let f = MissingFractions::from_table(&m);
        assert!(f.fractions[1] > 0.2 && f.fractions[0] == 0.0);
        let all = MissingFractions {
            fractions: vec![0.0, 1.0, 0.0],
        };
        assert!(matches!(wood_variance(&s, &fit, &spec1(), &all), Err(Error::FullyMissing(_))));
    }

    #[test]
    fn report_csv_rows() {
        let (_, s, fit) = weighted_instance(7);
        let r = louis_variance(&s, &fit).unwrap();
        let mut buf = Vec::new();
        write_reports(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("coefficient,estimate,se,ci_low,ci_high,method"));
        assert!(text.lines().nth(2).unwrap().starts_with("x1,"));
    }
}
