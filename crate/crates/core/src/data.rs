//! Observed-data structures shared by every estimator: the rectangular
//! sample, covariate subset declarations, cross-fitting folds, CSV
//! ingestion, and positivity diagnostics.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sample of (S, W, A, Y) rows. `S = 1` marks the source population,
/// `S = 0` the target. Outcomes may be missing only on target rows; the
/// `y_observed` mask records which entries of `y` are real.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    /// Population indicator, 0 or 1.
    pub s: Vec<u8>,
    /// Treatment indicator, 0 or 1.
    pub a: Vec<u8>,
    /// Outcome; meaningful only where `y_observed` is true.
    pub y: Vec<f64>,
    pub y_observed: Vec<bool>,
    /// Baseline covariates, n x p, no missing values.
    pub w: Array2<f64>,
    pub column_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(
        s: Vec<u8>,
        a: Vec<u8>,
        y: Vec<f64>,
        y_observed: Vec<bool>,
        w: Array2<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = s.len();
        if a.len() != n || y.len() != n || y_observed.len() != n || w.nrows() != n {
            return Err(Error::Validation(format!(
                "column lengths disagree: s={}, a={}, y={}, w rows={}",
                n,
                a.len(),
                y.len(),
                w.nrows()
            )));
        }
        if w.ncols() != column_names.len() {
            return Err(Error::Validation(format!(
                "{} covariate columns but {} names",
                w.ncols(),
                column_names.len()
            )));
        }
        for (i, &si) in s.iter().enumerate() {
            if si > 1 {
                return Err(Error::Validation(format!("s is not binary at row {i}")));
            }
            if a[i] > 1 {
                return Err(Error::Validation(format!("a is not binary at row {i}")));
            }
            if si == 1 && !y_observed[i] {
                return Err(Error::Validation(format!(
                    "missing outcome on source row {i}"
                )));
            }
            if y_observed[i] && !y[i].is_finite() {
                return Err(Error::Validation(format!("non-finite outcome at row {i}")));
            }
        }
        if !s.contains(&1) || !s.contains(&0) {
            return Err(Error::Validation(
                "both source (s=1) and target (s=0) rows are required".into(),
            ));
        }
        Ok(Self {
            n,
            s,
            a,
            y,
            y_observed,
            w,
            column_names,
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.w.ncols()
    }

    /// Indices of source rows (s = 1).
    pub fn source_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.s[i] == 1).collect()
    }

    /// Empirical P(S = 0).
    pub fn target_fraction(&self) -> f64 {
        self.s.iter().filter(|&&si| si == 0).count() as f64 / self.n as f64
    }

    /// Resolves covariate names to column indices.
    pub fn column_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|name| {
                self.column_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Schema(format!("unknown covariate column '{name}'")))
            })
            .collect()
    }
}

/// Declared covariate subsets: `v_idx` are the effect modifiers, `z_idx`
/// the modifiers whose distribution shifts between populations. `x_idx`
/// (covariates with shifted distributions regardless of modification) is
/// carried as metadata only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub v_idx: Vec<usize>,
    pub z_idx: Vec<usize>,
    pub x_idx: Option<Vec<usize>>,
}

impl SubsetSpec {
    pub fn new(v_idx: Vec<usize>, z_idx: Vec<usize>, x_idx: Option<Vec<usize>>) -> Self {
        Self {
            v_idx,
            z_idx,
            x_idx,
        }
    }

    /// Checks index ranges and that z is nested in v.
    pub fn validate(&self, p: usize) -> Result<()> {
        let v: BTreeSet<usize> = self.v_idx.iter().copied().collect();
        for &j in self.v_idx.iter().chain(self.z_idx.iter()) {
            if j >= p {
                return Err(Error::Argument(format!(
                    "subset index {j} out of range for {p} covariates"
                )));
            }
        }
        for &j in &self.z_idx {
            if !v.contains(&j) {
                return Err(Error::Argument(format!(
                    "z index {j} is not contained in v"
                )));
            }
        }
        if let Some(x) = &self.x_idx {
            for &j in x {
                if j >= p {
                    return Err(Error::Argument(format!(
                        "x index {j} out of range for {p} covariates"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a subset from column names against a dataset.
    pub fn from_names(ds: &Dataset, v: &[String], z: &[String]) -> Result<Self> {
        let spec = Self::new(ds.column_indices(v)?, ds.column_indices(z)?, None);
        spec.validate(ds.n_covariates())?;
        Ok(spec)
    }
}

/// A partition of row indices into J folds of near-equal size.
/// J = 1 encodes "no cross-fitting": a single fold covering every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n: usize,
    pub j: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// Rows belonging to fold `j`.
    pub fn fold_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == j).collect()
    }

    /// Training rows for fold `j`: the complement, except with J = 1 where
    /// training and prediction both use every row.
    pub fn training_rows(&self, j: usize) -> Vec<usize> {
        if self.j == 1 {
            (0..self.n).collect()
        } else {
            (0..self.n).filter(|&i| self.fold_of[i] != j).collect()
        }
    }
}

/// Randomly partitions `0..n` into `j` folds whose sizes differ by at
/// most one. Deterministic in (n, j, seed).
pub fn make_folds(n: usize, j: usize, seed: u64) -> Result<FoldAssignment> {
    if j < 1 || j > n {
        return Err(Error::Argument(format!(
            "fold count {j} must satisfy 1 <= J <= n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    // Block split of the shuffled order: fold sizes n/j rounded, the first
    // n % j folds get one extra row.
    let base = n / j;
    let extra = n % j;
    let mut pos = 0usize;
    for fold in 0..j {
        let size = base + usize::from(fold < extra);
        for &row in &order[pos..pos + size] {
            fold_of[row] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { n, j, fold_of })
}

/// Column-role mapping for CSV ingestion. Optional `v`/`z` entries give
/// default effect-modifier subsets for estimators that need them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub s: String,
    pub a: String,
    pub y: String,
    pub w: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn parse_binary(field: &str, row: usize, column: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Validation(format!(
            "column '{column}' must be 0/1 but row {row} has '{other}'"
        ))),
    }
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: e.to_string(),
    })
}

/// Loads a UTF-8, comma-separated, headered CSV file into a `Dataset`.
/// An empty outcome cell means missing; outcomes may be missing only on
/// target rows.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let s_col = find(&schema.s)?;
    let a_col = find(&schema.a)?;
    let y_col = find(&schema.y)?;
    if schema.w.is_empty() {
        return Err(Error::Schema("at least one covariate column is required".into()));
    }
    let w_cols: Vec<usize> = schema.w.iter().map(|name| find(name)).collect::<Result<_>>()?;

    let (mut s, mut a, mut y, mut y_observed) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut w_rows: Vec<f64> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        // Header is row 0 in the file; report 1-based data row numbers.
        let row = row_idx + 1;
        let si = parse_binary(&record[s_col], row, &schema.s)?;
        s.push(si);
        a.push(parse_binary(&record[a_col], row, &schema.a)?);
        let y_field = record[y_col].trim();
        if y_field.is_empty() {
            if si == 1 {
                return Err(Error::Validation(format!(
                    "missing outcome on source row {row}"
                )));
            }
            y.push(f64::NAN);
            y_observed.push(false);
        } else {
            y.push(parse_number(y_field, row, &schema.y)?);
            y_observed.push(true);
        }
        for (&col, name) in w_cols.iter().zip(&schema.w) {
            let field = record[col].trim();
            if field.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "covariates may not be missing".into(),
                });
            }
            w_rows.push(parse_number(field, row, name)?);
        }
    }
    let n = s.len();
    let w = Array2::from_shape_vec((n, w_cols.len()), w_rows)
        .map_err(|e| Error::Validation(e.to_string()))?;
    Dataset::new(s, a, y, y_observed, w, schema.w.clone())
}

/// Writes a dataset as CSV in the layout `load_csv` reads back:
/// s, a, y (empty where missing), then the covariate columns.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["s".to_string(), "a".to_string(), "y".to_string()];
    header.extend(ds.column_names.iter().cloned());
    writer.write_record(&header)?;
    for i in 0..ds.n {
        let mut record = vec![
            ds.s[i].to_string(),
            ds.a[i].to_string(),
            if ds.y_observed[i] {
                ds.y[i].to_string()
            } else {
                String::new()
            },
        ];
        for j in 0..ds.n_covariates() {
            record.push(ds.w[[i, j]].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Schema to read back a file produced by [`write_csv`].
pub fn default_schema(ds: &Dataset) -> CsvSchema {
    CsvSchema {
        s: "s".into(),
        a: "a".into(),
        y: "y".into(),
        w: ds.column_names.clone(),
        v: None,
        z: None,
    }
}

/// Positivity diagnostics: counts of extreme estimated propensities and,
/// for discrete transport subsets, Z strata observed in the target but
/// absent from the source. Purely informational; never fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub threshold: f64,
    /// Rows with selection propensity below `threshold` or above `1 - threshold`.
    pub selection_flagged: usize,
    /// Rows with treatment propensity below `threshold` or above `1 - threshold`.
    pub treatment_flagged: usize,
    /// Whether the Z-stratum scan ran (it requires integer-valued Z columns).
    pub strata_checked: bool,
    /// Z strata present among target rows but absent among source rows.
    pub missing_strata: Vec<Vec<i64>>,
}

pub fn positivity_report(
    ds: &Dataset,
    z_idx: &[usize],
    e_s_hat: &[f64],
    e_a_hat: &[f64],
    threshold: f64,
) -> PositivityReport {
    let flag = |p: &f64| *p < threshold || *p > 1.0 - threshold;
    let selection_flagged = e_s_hat.iter().filter(|p| flag(p)).count();
    let treatment_flagged = e_a_hat.iter().filter(|p| flag(p)).count();

    let discrete = !z_idx.is_empty()
        && z_idx.iter().all(|&j| {
            (0..ds.n).all(|i| {
                let v = ds.w[[i, j]];
                v.fract() == 0.0 && v.abs() < 1e9
            })
        });
    let mut missing_strata = Vec::new();
    if discrete {
        let stratum = |i: usize| -> Vec<i64> {
            z_idx.iter().map(|&j| ds.w[[i, j]] as i64).collect()
        };
        let source: BTreeSet<Vec<i64>> = (0..ds.n)
            .filter(|&i| ds.s[i] == 1)
            .map(stratum)
            .collect();
        let target: BTreeSet<Vec<i64>> = (0..ds.n)
            .filter(|&i| ds.s[i] == 0)
            .map(stratum)
            .collect();
        missing_strata = target.difference(&source).cloned().collect();
    }
    PositivityReport {
        threshold,
        selection_flagged,
        treatment_flagged,
        strata_checked: discrete,
        missing_strata,
    }
}
