use nalgebra::DMatrix;

use super::{Family, OutcomeSpec, Response};
use crate::error::{Error, Result};
use crate::table::{ColumnRole, Table};

/// One design column: the product of its factors. A factor is either a raw
/// column value or the indicator `column == level`. The intercept is the
/// empty product.
#[derive(Clone, Debug, PartialEq)]
struct Term {
    name: String,
    factors: Vec<(usize, Option<usize>)>,
}

/// Design-matrix expansion of an [`OutcomeSpec`] against a table layout.
/// Categorical columns use reference-cell dummies with code 0 as reference;
/// interactions are products of the expanded main effects, evaluated on
/// whatever values (observed or imputed) the row holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    terms: Vec<Term>,
    /// Source table columns of each term.
    sources: Vec<Vec<usize>>,
}

impl Design {
    pub fn new(spec: &OutcomeSpec, t: &Table) -> Result<Self> {
        let mut expanded: Vec<(String, Vec<Term>)> = Vec::new();
        for name in &spec.main_effects {
            let c = t.column_index(name)?;
            let terms = match t.role(c) {
                ColumnRole::Categorical(k) => (1..k)
                    .map(|lvl| Term {
                        name: format!("{name}={lvl}"),
                        factors: vec![(c, Some(lvl))],
                    })
                    .collect(),
                _ => vec![Term {
                    name: name.clone(),
                    factors: vec![(c, None)],
                }],
            };
            expanded.push((name.clone(), terms));
        }
        let mut terms = Vec::new();
        if spec.has_intercept() {
            terms.push(Term {
                name: "(Intercept)".into(),
                factors: Vec::new(),
            });
        }
        for (_, ts) in &expanded {
            terms.extend(ts.iter().cloned());
        }
        for (a, b) in &spec.interactions {
            let find = |n: &str| {
                expanded
                    .iter()
                    .find(|(m, _)| m == n)
                    .map(|(_, ts)| ts)
                    .ok_or_else(|| Error::InvalidSpec(format!("interaction term `{n}` is not a main effect")))
            };
            for ta in find(a)? {
                for tb in find(b)? {
                    let mut factors = ta.factors.clone();
                    factors.extend(tb.factors.iter().cloned());
                    terms.push(Term {
                        name: format!("{}:{}", ta.name, tb.name),
                        factors,
                    });
                }
            }
        }
        if terms.is_empty() {
            return Err(Error::InvalidSpec("empty design".into()));
        }
        let sources = terms
            .iter()
            .map(|t| {
                let mut s: Vec<usize> = t.factors.iter().map(|f| f.0).collect();
                s.dedup();
                s
            })
            .collect();
        Ok(Self { terms, sources })
    }

    pub fn n_coef(&self) -> usize {
        self.terms.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    /// Table columns feeding coefficient `j` (empty for the intercept).
    pub fn sources(&self, j: usize) -> &[usize] {
        &self.sources[j]
    }

    pub fn eval_row(&self, t: &Table, r: usize, out: &mut [f64]) {
        for (o, term) in out.iter_mut().zip(&self.terms) {
            *o = term
                .factors
                .iter()
                .map(|&(c, lvl)| {
                    let v = t.value(r, c);
                    match lvl {
                        None => v,
                        Some(l) => (v as usize == l) as u8 as f64,
                    }
                })
                .product();
        }
    }
}

/// Numeric model inputs: design matrix, response (or event time), and
/// event indicator for Cox models.
#[derive(Clone, Debug)]
pub struct ModelFrame {
    pub family: Family,
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    /// Response, or event time for Cox.
    pub y: Vec<f64>,
    /// Event indicator (Cox only; empty otherwise).
    pub status: Vec<f64>,
}

impl ModelFrame {
    /// Build from `rows` of `t` (all rows when `None`). Every referenced cell
    /// must be observed.
    pub fn build(design: &Design, spec: &OutcomeSpec, t: &Table, rows: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..t.n_rows()).collect();
                &all
            }
        };
        let resp: Vec<usize> = spec
            .response
            .columns()
            .into_iter()
            .map(|n| t.column_index(n))
            .collect::<Result<_>>()?;
        let needed = spec.columns(t)?;
        let q = design.n_coef();
        let mut x = DMatrix::zeros(rows.len(), q);
        let mut y = Vec::with_capacity(rows.len());
        let mut status = Vec::new();
        let mut buf = vec![0.0; q];
        for (i, &r) in rows.iter().enumerate() {
            if let Some(&c) = needed.iter().find(|&&c| !t.is_observed(r, c)) {
                return Err(Error::MissingCell {
                    row: r,
                    column: t.columns()[c].name.clone(),
                });
            }
            design.eval_row(t, r, &mut buf);
            for j in 0..q {
                x[(i, j)] = buf[j];
            }
            y.push(t.value(r, resp[0]));
            if matches!(spec.response, Response::Survival { .. }) {
                status.push(t.value(r, resp[1]));
            }
        }
        Ok(Self {
            family: spec.family,
            names: design.names(),
            x,
            y,
            status,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    /// Frame restricted to `rows`.
    pub fn select(&self, rows: &[usize]) -> Self {
        let q = self.n_coef();
        let x = DMatrix::from_fn(rows.len(), q, |i, j| self.x[(rows[i], j)]);
        Self {
            family: self.family,
            names: self.names.clone(),
            x,
            y: rows.iter().map(|&r| self.y[r]).collect(),
            status: if self.status.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&r| self.status[r]).collect()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;

    #[test]
    fn categorical_and_interaction_expansion() {
        let t = Table::from_columns(
            vec![
                Column::new("a", ColumnRole::Continuous),
                Column::new("g", ColumnRole::Categorical(3)),
                Column::new("y", ColumnRole::Continuous),
            ],
            vec![vec![2.0, 3.0], vec![0.0, 2.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let spec = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["a".into(), "g".into()])
            .with_interaction("a", "g");
        let d = Design::new(&spec, &t).unwrap();
        assert_eq!(
            d.names(),
            vec!["(Intercept)", "a", "g=1", "g=2", "a:g=1", "a:g=2"]
        );
        let mut row = vec![0.0; 6];
        d.eval_row(&t, 1, &mut row);
        assert_eq!(row, vec![1.0, 3.0, 0.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn missing_model_cell_is_an_error() {
        let t = Table::new(
            vec![
                Column::new("a", ColumnRole::Continuous),
                Column::new("y", ColumnRole::Continuous),
            ],
            vec![1.0, f64::NAN],
            vec![true, false],
        )
        .unwrap();
        let spec = OutcomeSpec::new(Family::Gaussian, Response::Single("y".into()), vec!["a".into()]);
        let d = Design::new(&spec, &t).unwrap();
        assert!(matches!(
            ModelFrame::build(&d, &spec, &t, None),
            Err(Error::MissingCell { .. })
        ));
    }
}
