//! Rectangular numeric datasets with per-column roles and a missingness mask.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnRole {
    Continuous,
    Binary,
    /// Integer codes in `[0, k)`; code 0 is the reference level.
    Categorical(usize),
    EventTime,
    EventIndicator,
}

impl ColumnRole {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s {
            "continuous" => Some(Self::Continuous),
            "binary" => Some(Self::Binary),
            "event-time" | "event_time" => Some(Self::EventTime),
            "event-indicator" | "event_indicator" => Some(Self::EventIndicator),
            _ => {
                let k = s.strip_prefix("categorical(")?.strip_suffix(')')?;
                k.trim().parse().ok().filter(|&k| k >= 2).map(Self::Categorical)
            }
        }
    }

    fn check(self, column: &str, row: usize, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                column: column.to_string(),
                row,
            });
        }
        match self {
            Self::Continuous => Ok(()),
            Self::Binary if v == 0.0 || v == 1.0 => Ok(()),
            Self::Binary => Err(Error::InvalidBinary {
                column: column.to_string(),
                row,
                value: v,
            }),
            Self::EventIndicator if v == 0.0 || v == 1.0 => Ok(()),
            Self::EventIndicator => Err(Error::InvalidEventIndicator {
                column: column.to_string(),
                row,
                value: v,
            }),
            Self::EventTime if v > 0.0 => Ok(()),
            Self::EventTime => Err(Error::NonpositiveEventTime {
                column: column.to_string(),
                row,
                value: v,
            }),
            Self::Categorical(k) if v >= 0.0 && v.fract() == 0.0 && (v as usize) < k => Ok(()),
            Self::Categorical(k) => Err(Error::InvalidCategory {
                column: column.to_string(),
                row,
                levels: k,
                value: v,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
}

impl Column {
    pub fn new(name: impl Into<String>, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

/// An `n × p` grid of values with a parallel observation mask
/// (`true` = observed). Unobserved cells hold `NaN`.
#[derive(Clone, Debug)]
pub struct Table {
    columns: Arc<Vec<Column>>,
    values: Vec<f64>,
    mask: Vec<bool>,
    n_rows: usize,
    truth: Option<Arc<Vec<f64>>>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
            && self.n_rows == other.n_rows
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &obs)| !obs || a.to_bits() == b.to_bits())
    }
}

impl Table {
    /// Build from a row-major value grid and mask. Values under a `false`
    /// mask entry are ignored.
    pub fn new(columns: Vec<Column>, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let p = columns.len();
        if p == 0 || !values.len().is_multiple_of(p) || values.len() != mask.len() {
            return Err(Error::Dimension(format!(
                "{} values and {} mask entries for {} columns",
                values.len(),
                mask.len(),
                p
            )));
        }
        let n_rows = values.len() / p;
        for (idx, (v, &obs)) in values.iter_mut().zip(&mask).enumerate() {
            let (r, c) = (idx / p, idx % p);
            if obs {
                columns[c].role.check(&columns[c].name, r, *v)?;
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            columns: Arc::new(columns),
            values,
            mask,
            n_rows,
            truth: None,
        })
    }

    /// Fully observed table from column vectors.
    pub fn from_columns(columns: Vec<Column>, data: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != data.len() {
            return Err(Error::Dimension("column count mismatch".into()));
        }
        let n = data.first().map_or(0, Vec::len);
        if data.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("ragged columns".into()));
        }
        let p = columns.len();
        let mut values = vec![0.0; n * p];
        for (c, col) in data.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                values[r * p + c] = v;
            }
        }
        Self::new(columns, values, vec![true; n * p])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn role(&self, col: usize) -> ColumnRole {
        self.columns[col].role
    }

    /// Cell value; `NaN` when unobserved.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.is_observed(row, col).then(|| self.value(row, col))
    }

    #[inline]
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.columns.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let p = self.columns.len();
        &self.values[row * p..(row + 1) * p]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        let p = self.columns.len();
        &self.mask[row * p..(row + 1) * p]
    }

    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.value(r, col)).collect()
    }

    pub fn missing_count(&self, col: usize) -> usize {
        (0..self.n_rows).filter(|&r| !self.is_observed(r, col)).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Per-row flag: every one of `cols` observed.
    pub fn complete_rows(&self, cols: &[usize]) -> Vec<bool> {
        (0..self.n_rows)
            .map(|r| cols.iter().all(|&c| self.is_observed(r, c)))
            .collect()
    }

    /// Rows with every cell observed.
    pub fn complete_case_count(&self) -> usize {
        (0..self.n_rows)
            .filter(|&r| self.row_mask(r).iter().all(|&m| m))
            .count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let p = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut mask = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            values.extend_from_slice(self.row(r));
            mask.extend_from_slice(self.row_mask(r));
        }
        Table {
            columns: Arc::clone(&self.columns),
            values,
            mask,
            n_rows: rows.len(),
            truth: None,
        }
    }

    /// Append a column. `values` entries that are `NaN` are treated as missing.
    pub fn with_column(&self, column: Column, values: &[f64]) -> Result<Table> {
        if values.len() != self.n_rows {
            return Err(Error::Dimension(format!(
                "new column has {} rows, table has {}",
                values.len(),
                self.n_rows
            )));
        }
        if self.column_index(&column.name).is_ok() {
            return Err(Error::InvalidSpec(format!("duplicate column `{}`", column.name)));
        }
        let p = self.n_cols();
        let mut cols = (*self.columns).clone();
        cols.push(column);
        let mut vals = Vec::with_capacity(self.n_rows * (p + 1));
        let mut mask = Vec::with_capacity(self.n_rows * (p + 1));
        for (r, &extra) in values.iter().enumerate() {
            vals.extend_from_slice(self.row(r));
            vals.push(extra);
            mask.extend_from_slice(self.row_mask(r));
            mask.push(!extra.is_nan());
        }
        Table::new(cols, vals, mask)
    }

    /// Store an imputed value and mark the cell observed.
    pub(crate) fn fill(&mut self, row: usize, col: usize, v: f64) {
        let idx = row * self.columns.len() + col;
        self.values[idx] = v;
        self.mask[idx] = true;
    }

    pub(crate) fn mask_cell(&mut self, row: usize, col: usize) {
        let idx = row * self.columns.len() + col;
        self.values[idx] = f64::NAN;
        self.mask[idx] = false;
    }

    pub(crate) fn set_truth(&mut self, truth: Arc<Vec<f64>>) {
        self.truth = Some(truth);
    }

    /// Pre-masking values retained by `apply_missingness`.
    pub(crate) fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref().map(Vec::as_slice)
    }

    pub(crate) fn raw_values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with every cell marked observed (the truth copy is dropped).
    pub(crate) fn without_truth(&self) -> Table {
        let mut t = self.clone();
        t.truth = None;
        t
    }
}

/// Parsed CSV: the schema columns plus any requested reserved columns.
#[derive(Debug)]
pub struct CsvData {
    pub table: Table,
    pub reserved: HashMap<String, Vec<f64>>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &[Column], na_token: &str) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    Ok(read_csv(file, schema, na_token, &[])?.table)
}

/// Read a CSV whose header is exactly the schema names plus `reserved`
/// (any order). Reserved columns must be fully observed numbers.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &[Column],
    na_token: &str,
    reserved: &[&str],
) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut slot: Vec<Slot> = Vec::with_capacity(header.len());
    for name in header.iter() {
        if let Some(c) = schema.iter().position(|c| c.name == name) {
            slot.push(Slot::Schema(c));
        } else if let Some(k) = reserved.iter().position(|&r| r == name) {
            slot.push(Slot::Reserved(k));
        } else {
            return Err(Error::UnknownColumn(name.to_string()));
        }
    }
    for col in schema {
        if !header.iter().any(|h| h == col.name) {
            return Err(Error::HeaderMismatch {
                expected: col.name.clone(),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
    }
    for r in reserved {
        if !header.iter().any(|h| h == *r) {
            return Err(Error::UnknownColumn(format!("missing reserved column {r}")));
        }
    }

    let p = schema.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut extra: Vec<Vec<f64>> = vec![Vec::new(); reserved.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::Dimension(format!(
                "line {line}: {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        let base = values.len();
        values.resize(base + p, f64::NAN);
        mask.resize(base + p, false);
        for (field, s) in rec.iter().zip(&slot) {
            let name = match s {
                Slot::Schema(c) => &schema[*c].name,
                Slot::Reserved(k) => reserved[*k],
            };
            let parsed = if field == na_token {
                None
            } else {
                Some(field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    column: name.to_string(),
                    value: field.to_string(),
                })?)
            };
            match (s, parsed) {
                (Slot::Schema(c), Some(v)) => {
                    values[base + c] = v;
                    mask[base + c] = true;
                }
                (Slot::Schema(_), None) => {}
                (Slot::Reserved(k), Some(v)) => extra[*k].push(v),
                (Slot::Reserved(_), None) => {
                    return Err(Error::Parse {
                        line,
                        column: name.to_string(),
                        value: field.to_string(),
                    })
                }
            }
        }
    }
    let table = Table::new(schema.to_vec(), values, mask)?;
    let reserved = reserved
        .iter()
        .zip(extra)
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    Ok(CsvData { table, reserved })
}

enum Slot {
    Schema(usize),
    Reserved(usize),
}

/// Write `table` followed by `extra` columns. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_csv<W: Write>(
    writer: W,
    table: &Table,
    na_token: &str,
    extra: &[(&str, &[f64])],
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let header: Vec<&str> = table
        .columns()
        .iter()
        .map(|c| c.name.as_str())
        .chain(extra.iter().map(|(n, _)| *n))
        .collect();
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..table.n_rows() {
        rec.clear();
        for c in 0..table.n_cols() {
            rec.push(match table.get(r, c) {
                Some(v) => format!("{v}"),
                None => na_token.to_string(),
            });
        }
        for (_, col) in extra {
            rec.push(format!("{}", col[r]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
