//! Datasets, CSV ingestion, standardization and sample moments.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{DrmaError, Result};

/// Predictors `x` (n × p) and response `y` (length n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(DrmaError::InvalidInput(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 {
            return Err(DrmaError::TooFewRows {
                needed: 2,
                found: x.nrows(),
            });
        }
        if x.ncols() == 0 {
            return Err(DrmaError::InvalidInput("no predictor columns".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DrmaError::NonFinite("dataset contains NaN or infinity".into()));
        }
        Ok(Dataset {
            x,
            y,
            column_names: None,
        })
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(DrmaError::InvalidInput(format!(
                "{} column names for {} predictors",
                names.len(),
                self.p()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Same predictors with a different response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        let mut out = Dataset::new(self.x.clone(), y)?;
        out.column_names = self.column_names.clone();
        Ok(out)
    }

    fn column_name(&self, j: usize) -> String {
        self.column_names
            .as_ref()
            .map(|n| n[j].clone())
            .unwrap_or_else(|| format!("x{}", j + 1))
    }
}

/// Column means and standard deviations used to standardize predictors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardizationRecord {
    pub means: Vec<f64>,
    pub standard_deviations: Vec<f64>,
}

impl StandardizationRecord {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.standard_deviations[j]);
            col.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.standard_deviations[j]);
            col.iter_mut().for_each(|v| *v = *v * s + m);
        }
        out
    }
}

/// Centers every predictor column and scales it to unit sample standard
/// deviation (divisor n − 1). The response is left untouched.
pub fn standardize_columns(data: &Dataset) -> Result<(Dataset, StandardizationRecord)> {
    let n = data.n() as f64;
    let mut means = Vec::with_capacity(data.p());
    let mut sds = Vec::with_capacity(data.p());
    for (j, col) in data.x.column_iter().enumerate() {
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1.0)).sqrt();
        if !(sd > 1e-12) {
            return Err(DrmaError::ZeroVariance {
                column: j,
                name: data.column_name(j),
            });
        }
        means.push(mean);
        sds.push(sd);
    }
    let record = StandardizationRecord {
        means,
        standard_deviations: sds,
    };
    let mut out = data.clone();
    out.x = record.apply(&data.x);
    Ok((out, record))
}

/// Column mean and covariance with divisor n.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn sample_moments(data: &Dataset) -> Result<SampleMoments> {
    moments_of(&data.x)
}

pub(crate) fn moments_of(x: &DMatrix<f64>) -> Result<SampleMoments> {
    let n = x.nrows();
    if n < 2 {
        return Err(DrmaError::TooFewRows { needed: 2, found: n });
    }
    let mean = x.row_mean().transpose();
    let centered = center(x, &mean);
    let mut covariance = centered.tr_mul(&centered) / n as f64;
    crate::linalg::symmetrize(&mut covariance);
    Ok(SampleMoments { mean, covariance })
}

pub(crate) fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// A raw table of string cells, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "?" | "NA")
}

fn check_exists(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DrmaError::FileNotFound(path.to_path_buf()))
    }
}

impl Table {
    /// Comma-separated file with a mandatory header row.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        check_exists(path)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    /// The whitespace-delimited UCI Auto-MPG layout: eight numeric fields
    /// followed by a quoted car name.
    pub fn from_uci_autompg(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        check_exists(path)?;
        let text = fs::read_to_string(path)?;
        let headers: Vec<String> = [
            "mpg",
            "cylinders",
            "displacement",
            "horsepower",
            "weight",
            "acceleration",
            "model-year",
            "origin",
            "car-name",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (numeric, name) = match line.find('"') {
                Some(pos) => (&line[..pos], line[pos..].trim().trim_matches('"')),
                None => (line, ""),
            };
            let mut cells: Vec<String> = numeric.split_whitespace().map(str::to_string).collect();
            if cells.len() != 8 {
                return Err(DrmaError::InvalidInput(format!(
                    "line {}: expected 8 numeric fields, found {}",
                    lineno + 1,
                    cells.len()
                )));
            }
            cells.push(name.to_string());
            rows.push(cells);
        }
        Ok(Table { headers, rows })
    }

    /// Picks the CSV reader for `.csv` files and the UCI layout otherwise.
    pub fn from_autompg_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_csv = path.extension().map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false);
        if is_csv {
            Table::from_csv(path)
        } else {
            Table::from_uci_autompg(path)
        }
    }

    fn find_column(&self, wanted: &str) -> Option<usize> {
        let norm = |s: &str| s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let wanted = norm(wanted);
        self.headers.iter().position(|h| norm(h) == wanted)
    }

    fn resolve(&self, column: &ColumnRef) -> Result<usize> {
        match column {
            ColumnRef::Name(name) => self
                .find_column(name)
                .or_else(|| name.parse::<usize>().ok().filter(|&i| i < self.headers.len()))
                .ok_or_else(|| DrmaError::MissingColumn(name.clone())),
            ColumnRef::Index(i) if *i < self.headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(DrmaError::MissingColumn(format!("#{i}"))),
        }
    }

    /// Parses the selected columns as numbers, dropping rows with a missing
    /// cell in any of them. Returns the numeric rows and the drop count.
    fn numeric_rows(&self, columns: &[usize]) -> Result<(Vec<Vec<f64>>, usize)> {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut dropped = 0;
        for (r, row) in self.rows.iter().enumerate() {
            let cells: Vec<&str> = columns
                .iter()
                .map(|&c| row.get(c).map(String::as_str).unwrap_or(""))
                .collect();
            if cells.iter().any(|c| is_missing(c)) {
                dropped += 1;
                continue;
            }
            let mut values = Vec::with_capacity(columns.len());
            for (&c, cell) in columns.iter().zip(&cells) {
                let v: f64 = cell.trim().parse().map_err(|_| DrmaError::NonNumeric {
                    column: self.headers[c].clone(),
                    row: r + 1,
                    value: cell.to_string(),
                })?;
                values.push(v);
            }
            out.push(values);
        }
        Ok((out, dropped))
    }
}

/// Identifies the response column by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

impl From<usize> for ColumnRef {
    fn from(i: usize) -> Self {
        ColumnRef::Index(i)
    }
}

/// A dataset together with the number of incomplete rows that were dropped.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub data: Dataset,
    pub dropped_rows: usize,
    pub response_name: String,
}

/// Reads a CSV file; the response column is extracted and every other column
/// becomes a predictor. Incomplete rows are removed listwise.
pub fn load_csv(path: impl AsRef<Path>, response: impl Into<ColumnRef>) -> Result<Loaded> {
    load_csv_excluding(path, response, &[])
}

/// [`load_csv`] ignoring the columns in `exclude` (e.g. labels).
pub fn load_csv_excluding(
    path: impl AsRef<Path>,
    response: impl Into<ColumnRef>,
    exclude: &[ColumnRef],
) -> Result<Loaded> {
    let table = Table::from_csv(path)?;
    let response_col = table.resolve(&response.into())?;
    let skipped = exclude.iter().map(|c| table.resolve(c)).collect::<Result<Vec<_>>>()?;
    let mut columns: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != response_col && !skipped.contains(&c))
        .collect();
    columns.push(response_col);
    let (rows, dropped) = table.numeric_rows(&columns)?;
    let names: Vec<String> = columns[..columns.len() - 1]
        .iter()
        .map(|&c| table.headers[c].clone())
        .collect();
    let data = dataset_from_rows(&rows, names)?;
    Ok(Loaded {
        data,
        dropped_rows: dropped,
        response_name: table.headers[response_col].clone(),
    })
}

/// Rows whose last entry is the response.
fn dataset_from_rows(rows: &[Vec<f64>], names: Vec<String>) -> Result<Dataset> {
    if rows.len() < 2 {
        return Err(DrmaError::TooFewRows {
            needed: 2,
            found: rows.len(),
        });
    }
    let p = names.len();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[p]));
    Dataset::new(x, y)?.with_column_names(names)
}

/// The cleaned and standardized Auto-MPG regression problem.
#[derive(Debug, Clone)]
pub struct AutoMpg {
    pub data: Dataset,
    pub standardization: StandardizationRecord,
    pub dropped_rows: usize,
}

/// Builds the eight-predictor Auto-MPG design: six numeric predictors plus
/// indicators for American and European origin (Japanese is the baseline).
/// Every predictor is standardized separately; the response is mpg.
pub fn preprocess_autompg(table: &Table) -> Result<AutoMpg> {
    let required = [
        "mpg",
        "cylinders",
        "displacement",
        "horsepower",
        "weight",
        "acceleration",
        "model-year",
        "origin",
    ];
    let mut columns = Vec::with_capacity(required.len());
    for name in required {
        let idx = table
            .find_column(name)
            .or_else(|| (name == "model-year").then(|| table.find_column("year")).flatten())
            .ok_or_else(|| DrmaError::MissingColumn(name.to_string()))?;
        columns.push(idx);
    }
    let (rows, dropped) = table.numeric_rows(&columns)?;
    let mut design = Vec::with_capacity(rows.len());
    for row in &rows {
        let origin = row[7].round() as i64;
        if !(1..=3).contains(&origin) {
            return Err(DrmaError::InvalidInput(format!("unknown origin code {}", row[7])));
        }
        let mut out = row[1..7].to_vec();
        out.push(if origin == 1 { 1.0 } else { 0.0 });
        out.push(if origin == 2 { 1.0 } else { 0.0 });
        out.push(row[0]);
        design.push(out);
    }
    let names = [
        "cylinders",
        "displacement",
        "horsepower",
        "weight",
        "acceleration",
        "model-year",
        "american",
        "european",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let raw = dataset_from_rows(&design, names)?;
    let (data, standardization) = standardize_columns(&raw)?;
    Ok(AutoMpg {
        data,
        standardization,
        dropped_rows: dropped,
    })
}
