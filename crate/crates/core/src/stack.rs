//! Stacking imputed tables and weighting stacked rows by the complete-case
//! outcome density.

use std::io::{Read, Write};

use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::linalg::mvn_draw;
use crate::models::{
    breslow_baseline, fit_frame, log_densities, Design, Family, FitResult, ModelFrame, OutcomeParams, OutcomeSpec,
};
use crate::rng;
use crate::table::{read_csv, write_csv, Column, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StackMode {
    /// Every subject appears `M` times.
    Tall,
    /// Complete-case subjects appear once, the rest `M` times.
    Short,
}

impl StackMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tall" => Some(Self::Tall),
            "short" => Some(Self::Short),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// Densities at the complete-case MLE.
    Mle,
    /// One draw of the complete-case parameters per imputation index.
    Draw,
}

impl WeightMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mle" => Some(Self::Mle),
            "draw" => Some(Self::Draw),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StackedTable {
    table: Table,
    subject: Vec<usize>,
    imp: Vec<usize>,
    weights: Option<Vec<f64>>,
    mode: StackMode,
    m: usize,
    /// Per subject: no missing cell in the original table.
    complete: Vec<bool>,
    /// Per subject: the outcome was imputed rather than observed.
    outcome_imputed: Vec<bool>,
    /// Per subject: stacked row indices.
    rows_of: Vec<Vec<usize>>,
}

/// Stack `M` completed versions of `original`.
pub fn stack(original: &Table, imputed: &[Table], mode: StackMode) -> Result<StackedTable> {
    let m = imputed.len();
    if m == 0 {
        return Err(Error::Dimension("no imputed tables to stack".into()));
    }
    let n = original.n_rows();
    for t in imputed {
        if t.n_rows() != n || t.columns() != original.columns() {
            return Err(Error::Dimension("imputed tables differ in shape from the original".into()));
        }
        for r in 0..n {
            for c in 0..original.n_cols() {
                if original.is_observed(r, c) && (!t.is_observed(r, c) || t.value(r, c).to_bits() != original.value(r, c).to_bits()) {
                    return Err(Error::Dimension(format!(
                        "imputed table disagrees with observed cell ({r}, {})",
                        original.columns()[c].name
                    )));
                }
                if !t.is_observed(r, c) {
                    return Err(Error::MissingCell {
                        row: r,
                        column: original.columns()[c].name.clone(),
                    });
                }
            }
        }
    }
    let complete: Vec<bool> = (0..n).map(|r| original.row_mask(r).iter().all(|&o| o)).collect();
    let mut picks = Vec::new();
    for (k, _) in imputed.iter().enumerate() {
        for (r, &cc) in complete.iter().enumerate() {
            if mode == StackMode::Short && cc && k > 0 {
                continue;
            }
            picks.push((k, r));
        }
    }
    let mut values = Vec::with_capacity(picks.len() * original.n_cols());
    for &(k, r) in &picks {
        values.extend_from_slice(imputed[k].row(r));
    }
    let table = Table::new(original.columns().to_vec(), values, vec![true; picks.len() * original.n_cols()])?;
    let subject: Vec<usize> = picks.iter().map(|p| p.1).collect();
    let imp: Vec<usize> = picks.iter().map(|p| p.0).collect();
    Ok(StackedTable::assemble(table, subject, imp, m, complete, vec![false; n], mode))
}

impl StackedTable {
    fn assemble(
        table: Table,
        subject: Vec<usize>,
        imp: Vec<usize>,
        m: usize,
        complete: Vec<bool>,
        outcome_imputed: Vec<bool>,
        mode: StackMode,
    ) -> Self {
        let mut rows_of = vec![Vec::new(); complete.len()];
        for (r, &i) in subject.iter().enumerate() {
            rows_of[i].push(r);
        }
        Self {
            table,
            subject,
            imp,
            weights: None,
            mode,
            m,
            complete,
            outcome_imputed,
            rows_of,
        }
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    pub fn n_subjects(&self) -> usize {
        self.complete.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> StackMode {
        self.mode
    }

    /// Subject index of each stacked row.
    pub fn subjects(&self) -> &[usize] {
        &self.subject
    }

    /// Zero-based imputation index of each stacked row.
    pub fn imputations(&self) -> &[usize] {
        &self.imp
    }

    pub fn rows_of(&self, subject: usize) -> &[usize] {
        &self.rows_of[subject]
    }

    pub fn is_complete(&self, subject: usize) -> bool {
        self.complete[subject]
    }

    pub fn outcome_imputed(&self, subject: usize) -> bool {
        self.outcome_imputed[subject]
    }

    /// Flag subjects whose outcome cells were missing in `original`; their
    /// weights are uniform because the imputed outcome carries no
    /// information about which covariate imputation is plausible.
    pub fn mark_outcome_imputed(&mut self, original: &Table, spec: &OutcomeSpec) -> Result<()> {
        let cols: Vec<usize> = spec
            .response
            .columns()
            .iter()
            .map(|c| original.column_index(c))
            .collect::<Result<_>>()?;
        if original.n_rows() != self.n_subjects() {
            return Err(Error::Dimension("original table does not match the stack".into()));
        }
        for i in 0..self.n_subjects() {
            self.outcome_imputed[i] = cols.iter().any(|&c| !original.is_observed(i, c));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<&[f64]> {
        self.weights
            .as_deref()
            .ok_or_else(|| Error::InvalidWeights("stack has no weights".into()))
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.n_rows() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights("weights must be finite, nonnegative, one per row".into()));
        }
        self.weights = Some(w);
        Ok(self)
    }

    /// Write the stack with `_subject`, `_imp` (1-based), `_complete` and, if
    /// set, `_weight` columns.
    pub fn write_csv<W: Write>(&self, writer: W, na_token: &str) -> Result<()> {
        let subj: Vec<f64> = self.subject.iter().map(|&s| s as f64).collect();
        let imp: Vec<f64> = self.imp.iter().map(|&k| (k + 1) as f64).collect();
        let comp: Vec<f64> = self.subject.iter().map(|&s| self.complete[s] as u8 as f64).collect();
        let yimp: Vec<f64> = self.subject.iter().map(|&s| self.outcome_imputed[s] as u8 as f64).collect();
        let mut extra: Vec<(&str, &[f64])> = vec![("_subject", &subj), ("_imp", &imp), ("_complete", &comp)];
        if self.outcome_imputed.iter().any(|&b| b) {
            extra.push(("_outcome_imputed", &yimp));
        }
        if let Some(w) = &self.weights {
            extra.push(("_weight", w));
        }
        write_csv(writer, &self.table, na_token, &extra)
    }

    /// Read a stack written by [`StackedTable::write_csv`]. Subject ids must
    /// be `0..n`; the stack mode is inferred from appearance counts.
    pub fn read_csv<R: Read>(mut reader: R, schema: &[Column], na_token: &str) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').map(str::trim).collect();
        let mut reserved = vec!["_subject", "_imp", "_complete"];
        for opt in ["_outcome_imputed", "_weight"] {
            if header.contains(&opt) {
                reserved.push(opt);
            }
        }
        let data = read_csv(text.as_bytes(), schema, na_token, &reserved)?;
        let table = data.table;
        if !table.is_complete() {
            return Err(Error::InvalidSpec("stacked file contains missing cells".into()));
        }
        let as_index = |name: &str, v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidSpec(format!("{name} must be a nonnegative integer, found {v}")))
            }
        };
        let subject: Vec<usize> = data.reserved["_subject"]
            .iter()
            .map(|&v| as_index("_subject", v))
            .collect::<Result<_>>()?;
        let imp: Vec<usize> = data.reserved["_imp"]
            .iter()
            .map(|&v| as_index("_imp", v).and_then(|k| k.checked_sub(1).ok_or_else(|| Error::InvalidSpec("_imp is 1-based".into()))))
            .collect::<Result<_>>()?;
        let n = subject.iter().max().map_or(0, |s| s + 1);
        let m = imp.iter().max().map_or(0, |k| k + 1);
        let mut complete = vec![false; n];
        let mut outcome_imputed = vec![false; n];
        let mut counts = vec![0usize; n];
        for (r, &s) in subject.iter().enumerate() {
            counts[s] += 1;
            complete[s] = data.reserved["_complete"][r] > 0.5;
            if let Some(y) = data.reserved.get("_outcome_imputed") {
                outcome_imputed[s] = y[r] > 0.5;
            }
        }
        if counts.contains(&0) {
            return Err(Error::InvalidSpec("subject ids must be contiguous from 0".into()));
        }
        let mode = if counts.iter().all(|&c| c == m) {
            StackMode::Tall
        } else {
            StackMode::Short
        };
        for (s, &c) in counts.iter().enumerate() {
            let ok = c == m || (mode == StackMode::Short && complete[s] && c == 1);
            if !ok {
                return Err(Error::InvalidSpec(format!("subject {s} appears {c} times with M = {m}")));
            }
        }
        let mut out = StackedTable::assemble(table, subject, imp, m, complete, outcome_imputed, mode);
        if let Some(w) = data.reserved.get("_weight") {
            out = out.with_weights(w.clone())?;
        }
        Ok(out)
    }
}

/// Complete-case analysis model used to compute weights.
#[derive(Clone, Debug)]
pub struct CompleteCaseFit {
    pub fit: FitResult,
    /// MLE parameters, with the Breslow baseline for Cox models.
    pub params: OutcomeParams,
    pub n_complete: usize,
}

/// Fit `spec` on rows with every model column observed.
pub fn complete_case_fit(t: &Table, spec: &OutcomeSpec) -> Result<CompleteCaseFit> {
    spec.validate(t)?;
    let cols = spec.columns(t)?;
    let rows: Vec<usize> = t
        .complete_rows(&cols)
        .into_iter()
        .enumerate()
        .filter_map(|(r, ok)| ok.then_some(r))
        .collect();
    let design = Design::new(spec, t)?;
    let needed = design.n_coef() + 2;
    if rows.len() < needed {
        return Err(Error::InsufficientRows {
            needed,
            available: rows.len(),
        });
    }
    let frame = ModelFrame::build(&design, spec, t, Some(&rows))?;
    let w = vec![1.0; rows.len()];
    let fit = fit_frame(&frame, &w)?;
    let mut params = fit.params();
    if spec.family == Family::Cox {
        params.baseline = Some(breslow_baseline(&fit.coef, &frame, &w)?);
    }
    Ok(CompleteCaseFit {
        fit,
        params,
        n_complete: rows.len(),
    })
}

impl CompleteCaseFit {
    /// One draw from the asymptotic sampling distribution. Gaussian models
    /// redraw `σ²` from its scaled inverse-χ² and scale the coefficient
    /// covariance with it. The Cox baseline stays at its MLE.
    pub fn draw(&self, rng: &mut rng::Rng) -> Result<OutcomeParams> {
        let mut cov = self.fit.model_covariance()?;
        let mut dispersion = self.params.dispersion;
        if let Some(s2) = self.params.dispersion {
            let q = self.fit.n_coef();
            let df = self.n_complete.saturating_sub(q).max(1) as f64;
            let rss = s2 * self.n_complete as f64;
            let chi2: f64 = ChiSquared::new(df).expect("df > 0").sample(rng);
            let drawn = rss / chi2;
            cov *= drawn / s2;
            dispersion = Some(drawn);
        }
        Ok(OutcomeParams {
            coef: mvn_draw(&self.fit.coef, &cov, rng)?,
            dispersion,
            baseline: self.params.baseline.clone(),
        })
    }
}

/// Diagnostics from weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WeightDiagnostics {
    /// Subjects whose densities all underflowed; given uniform weights.
    pub uniform_fallback: usize,
}

/// Normalize per-subject log densities in place. Returns false if every
/// entry is `−∞` or NaN, leaving uniform weights.
pub fn normalize_log_weights(logs: &mut [f64]) -> bool {
    let mx = logs
        .iter()
        .cloned()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        let u = 1.0 / logs.len() as f64;
        logs.iter_mut().for_each(|v| *v = u);
        return false;
    }
    let mut total = 0.0;
    for v in logs.iter_mut() {
        *v = if v.is_nan() { 0.0 } else { (*v - mx).exp() };
        total += *v;
    }
    logs.iter_mut().for_each(|v| *v /= total);
    true
}

/// Weight each stacked row by `f(Y | X; θ_cc)`, normalized within subject.
/// Complete-case subjects and subjects with an imputed outcome get `1 /
/// appearances`.
pub fn compute_weights(
    s: &StackedTable,
    cc: &CompleteCaseFit,
    spec: &OutcomeSpec,
    mode: WeightMode,
    seed: u64,
) -> Result<(StackedTable, WeightDiagnostics)> {
    let design = Design::new(spec, &s.table)?;
    let frame = ModelFrame::build(&design, spec, &s.table, None)?;
    let logd = match mode {
        WeightMode::Mle => log_densities(&frame, &cc.params)?,
        WeightMode::Draw => {
            let mut out = vec![0.0; s.n_rows()];
            for k in 0..s.m {
                let rows: Vec<usize> = (0..s.n_rows()).filter(|&r| s.imp[r] == k).collect();
                if rows.is_empty() {
                    continue;
                }
                let mut rng = rng::stream(rng::split_path(seed, &[rng::tag::WEIGHTS, k as u64]));
                let params = cc.draw(&mut rng)?;
                let vals = log_densities(&frame.select(&rows), &params)?;
                for (&r, v) in rows.iter().zip(vals) {
                    out[r] = v;
                }
            }
            out
        }
    };
    let mut w = vec![0.0; s.n_rows()];
    let mut diag = WeightDiagnostics::default();
    let mut buf = Vec::new();
    for i in 0..s.n_subjects() {
        let rows = &s.rows_of[i];
        if s.complete[i] || s.outcome_imputed[i] {
            let u = 1.0 / rows.len() as f64;
            rows.iter().for_each(|&r| w[r] = u);
            continue;
        }
        buf.clear();
        buf.extend(rows.iter().map(|&r| logd[r]));
        if !normalize_log_weights(&mut buf) {
            diag.uniform_fallback += 1;
        }
        for (&r, &v) in rows.iter().zip(&buf) {
            w[r] = v;
        }
    }
    Ok((s.clone().with_weights(w)?, diag))
}

/// Plain stacked-MI weights: `1 / appearances`.
pub fn unit_mi_weights(s: &StackedTable) -> StackedTable {
    let w = s.subject.iter().map(|&i| 1.0 / s.rows_of[i].len() as f64).collect();
    s.clone().with_weights(w).expect("valid weights")
}

/// Maximum deviation of per-subject weight sums from one.
pub fn normalization_error(s: &StackedTable) -> Result<f64> {
    let w = s.weights()?;
    Ok((0..s.n_subjects())
        .map(|i| (s.rows_of[i].iter().map(|&r| w[r]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{apply_missingness, generate_scenario, Scenario, ScenarioId};
    use crate::impute::{chained_impute, ChainConfig, ImputerFamily, ImputerSpec};
    use crate::models::{fit_weighted, Response};
    use crate::table::ColumnRole;

    fn small() -> (Table, Vec<Table>) {
        let cols = vec![
            Column::new("x", ColumnRole::Continuous),
            Column::new("y", ColumnRole::Continuous),
        ];
        let orig = Table::new(
            cols.clone(),
            vec![1.0, 2.0, f64::NAN, 3.0, 4.0, 5.0],
            vec![true, true, false, true, true, true],
        )
        .unwrap();
        let a = Table::new(cols.clone(), vec![1.0, 2.0, 0.5, 3.0, 4.0, 5.0], vec![true; 6]).unwrap();
        let b = Table::new(cols, vec![1.0, 2.0, -0.5, 3.0, 4.0, 5.0], vec![true; 6]).unwrap();
        (orig, vec![a, b])
    }

    #[test]
    fn row_counts() {
        let (orig, imps) = small();
        assert_eq!(stack(&orig, &imps, StackMode::Short).unwrap().n_rows(), 4);
        assert_eq!(stack(&orig, &imps, StackMode::Tall).unwrap().n_rows(), 6);
        let complete = imps[0].clone();
        let s = stack(&complete, &[complete.clone(), complete.clone()], StackMode::Short).unwrap();
        assert_eq!(*s.table(), complete);
    }

    #[test]
    fn mismatched_tables_rejected() {
        let (orig, mut imps) = small();
        imps[1] = imps[1].select_rows(&[0, 1]);
        assert!(stack(&orig, &imps, StackMode::Tall).is_err());
    }

    #[test]
    fn normalization_examples() {
        let mut l = vec![0.2_f64.ln(), 0.6_f64.ln()];
        assert!(normalize_log_weights(&mut l));
        assert!((l[0] - 0.25).abs() < 1e-15 && (l[1] - 0.75).abs() < 1e-15);
        let mut z = vec![f64::NEG_INFINITY; 3];
        assert!(!normalize_log_weights(&mut z));
        assert_eq!(z, vec![1.0 / 3.0; 3]);
        // far below the exp underflow threshold, still well defined
        let mut deep = vec![-2000.0, -2000.0 + 3.0_f64.ln()];
        assert!(normalize_log_weights(&mut deep));
        assert!((deep[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn unit_weights() {
        let (orig, imps) = small();
        let tall = unit_mi_weights(&stack(&orig, &imps, StackMode::Tall).unwrap());
        assert!(tall.weights().unwrap().iter().all(|&w| w == 0.5));
        let short = unit_mi_weights(&stack(&orig, &imps, StackMode::Short).unwrap());
        assert_eq!(short.weights().unwrap(), &[1.0, 0.5, 1.0, 0.5]);
        assert!(normalization_error(&short).unwrap() < 1e-15);
    }

    fn scenario1(n: usize, seed: u64) -> (Table, Vec<Table>, OutcomeSpec) {
        let s = Scenario::Linear;
        let t = generate_scenario(ScenarioId { scenario: s, n, seed }).unwrap();
        let m = apply_missingness(&t, &s.mechanisms([0.0, 1.0, 0.0]), seed).unwrap();
        let specs = vec![ImputerSpec::new("x2", &["x1"], ImputerFamily::BayesLinear)];
        let mut cfg = ChainConfig::new(5, seed).with_outcome(&["y"]);
        cfg.cycles = 2;
        let imps = chained_impute(&m, &specs, &cfg).unwrap();
        let spec = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["x1".into(), "x2".into()]);
        (m, imps, spec)
    }

    #[test]
    fn weights_normalized_and_complete_cases_constant() {
        let (m, imps, spec) = scenario1(300, 3);
        let cc = complete_case_fit(&m, &spec).unwrap();
        for mode in [WeightMode::Mle, WeightMode::Draw] {
            let s = stack(&m, &imps, StackMode::Tall).unwrap();
            let (ws, d) = compute_weights(&s, &cc, &spec, mode, 4).unwrap();
            assert_eq!(d.uniform_fallback, 0);
            assert!(normalization_error(&ws).unwrap() < 1e-12);
            let w = ws.weights().unwrap();
            for i in 0..ws.n_subjects() {
                if ws.is_complete(i) {
                    assert!(ws.rows_of(i).iter().all(|&r| w[r] == 0.2));
                }
            }
            let again = compute_weights(&s, &cc, &spec, mode, 4).unwrap().0;
            assert_eq!(again.weights().unwrap(), w);
        }
    }

    #[test]
    fn tall_and_short_fits_agree() {
        let (m, imps, spec) = scenario1(200, 8);
        let cc = complete_case_fit(&m, &spec).unwrap();
        let tall = compute_weights(&stack(&m, &imps, StackMode::Tall).unwrap(), &cc, &spec, WeightMode::Mle, 1)
            .unwrap()
            .0;
        let short = compute_weights(&stack(&m, &imps, StackMode::Short).unwrap(), &cc, &spec, WeightMode::Mle, 1)
            .unwrap()
            .0;
        let a = fit_weighted(tall.table(), &spec, tall.weights().unwrap()).unwrap();
        let b = fit_weighted(short.table(), &spec, short.weights().unwrap()).unwrap();
        assert!((&a.coef - &b.coef).amax() < 1e-10);
    }

    #[test]
    fn complete_case_fit_on_full_table_is_full_fit() {
        let s = Scenario::Linear;
        let t = generate_scenario(ScenarioId { scenario: s, n: 200, seed: 2 }).unwrap();
        let spec = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["x1".into(), "x2".into()]);
        let cc = complete_case_fit(&t, &spec).unwrap();
        let full = fit_weighted(&t, &spec, &vec![1.0; 200]).unwrap();
        assert!((cc.fit.coef.clone() - full.coef).amax() < 1e-12);
        assert_eq!(cc.n_complete, 200);
    }

    #[test]
    fn csv_round_trip() {
        let (m, imps, spec) = scenario1(60, 5);
        let cc = complete_case_fit(&m, &spec).unwrap();
        let s = compute_weights(&stack(&m, &imps, StackMode::Short).unwrap(), &cc, &spec, WeightMode::Mle, 1)
            .unwrap()
            .0;
        let mut buf = Vec::new();
        s.write_csv(&mut buf, "NA").unwrap();
        let back = StackedTable::read_csv(buf.as_slice(), m.columns(), "NA").unwrap();
        assert_eq!(back.table(), s.table());
        assert_eq!(back.weights().unwrap(), s.weights().unwrap());
        assert_eq!(back.subjects(), s.subjects());
        assert_eq!(back.imputations(), s.imputations());
        assert_eq!(back.mode(), StackMode::Short);
        assert_eq!(back.m(), 5);
    }
}
