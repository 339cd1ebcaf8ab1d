//! Datasets, CSV ingestion and predictor whitening.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{PalsError, Result};
use crate::linalg;

/// Relative eigenvalue floor used when inverting the covariance square root.
pub const EIGENVALUE_FLOOR_RATIO: f64 = 1e-10;

/// n observations of a p-dimensional predictor and a scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    predictor_names: Vec<String>,
    response_name: String,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, names, "y".to_string())
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DVector<f64>,
        predictor_names: Vec<String>,
        response_name: String,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(PalsError::DimensionMismatch(format!(
                "{} predictor rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 {
            return Err(PalsError::InvalidData(format!(
                "need at least 2 observations, got {}",
                x.nrows()
            )));
        }
        if x.ncols() < 1 {
            return Err(PalsError::InvalidData("need at least one predictor".into()));
        }
        if predictor_names.len() != x.ncols() {
            return Err(PalsError::DimensionMismatch(format!(
                "{} predictor names for {} columns",
                predictor_names.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(PalsError::InvalidData("non-finite entry".into()));
        }
        Ok(Self {
            x,
            y,
            predictor_names,
            response_name,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Sample covariance of the predictors with divisor n.
    pub fn covariance(&self) -> DMatrix<f64> {
        covariance(&self.x)
    }

    /// Same response with the predictors replaced by `f(X)`; columns are renamed `x1..`.
    pub fn map_predictors(&self, f: impl FnOnce(&DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        let x = f(&self.x);
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, self.y.clone(), names, self.response_name.clone())
    }
}

/// Column means of `x`.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// `x` with its column means subtracted.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// `n^{-1} Σ (x_i - x̄)(x_i - x̄)^T`.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xc = center_columns(x);
    let cov = xc.transpose() * &xc / x.nrows() as f64;
    (&cov + cov.transpose()) * 0.5
}

/// Centering and whitening statistics of a predictor matrix.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `Σ̂^{-1/2}` with eigenvalues floored at `eigenvalue_floor`.
    pub whitener: DMatrix<f64>,
    /// `Σ̂^{1/2}` built from the same floored spectrum.
    pub root: DMatrix<f64>,
    pub eigenvalue_floor: f64,
    /// Number of covariance eigenvalues that fell below the floor.
    pub clamped: usize,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let mean = column_means(x);
        let cov = covariance(x);
        let spectrum = linalg::sym_eigen(&cov)?;
        let largest = spectrum.values.iter().cloned().fold(0.0_f64, f64::max);
        let eigenvalue_floor = if largest > 0.0 {
            EIGENVALUE_FLOOR_RATIO * largest
        } else {
            EIGENVALUE_FLOOR_RATIO
        };
        let (whitener, clamped) =
            linalg::sym_matrix_function(&cov, eigenvalue_floor, |v| v.sqrt().recip())?;
        let (root, _) = linalg::sym_matrix_function(&cov, eigenvalue_floor, f64::sqrt)?;
        if clamped > 0 {
            warn!(
                "{clamped} covariance eigenvalue(s) below floor {eigenvalue_floor:e}; whitening is clamped"
            );
        }
        Ok(Self {
            mean,
            cov,
            whitener,
            root,
            eigenvalue_floor,
            clamped,
        })
    }

    pub fn is_clamped(&self) -> bool {
        self.clamped > 0
    }

    /// `Z = (X - 1 x̄^T) Σ̂^{-1/2}`.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut xc = x.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        xc * &self.whitener
    }

    /// Coefficients in whitened coordinates mapped to the original scale: `β = Σ̂^{-1/2} θ`.
    pub fn to_original(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.whitener * theta
    }

    /// Inverse of [`Standardizer::to_original`]: `θ = Σ̂^{1/2} β`.
    pub fn to_whitened(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.root * beta
    }
}

/// Centers and whitens the predictors of `data`.
pub fn standardize(data: &Dataset) -> Result<(Standardizer, DMatrix<f64>)> {
    let st = Standardizer::fit(data.x())?;
    let z = st.transform(data.x());
    Ok((st, z))
}

/// A column selected by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(s) => f.write_str(s),
        }
    }
}

impl ColumnRef {
    fn resolve(&self, header: &[String]) -> Option<usize> {
        match self {
            ColumnRef::Index(i) => (*i < header.len()).then_some(*i),
            ColumnRef::Name(name) => header.iter().position(|h| h == name),
        }
    }
}

/// Excludes every row whose `column` equals `value`, e.g. `CHAS=1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowFilter {
    pub column: ColumnRef,
    pub value: f64,
}

impl FromStr for RowFilter {
    type Err = PalsError;

    fn from_str(s: &str) -> Result<Self> {
        let (col, val) = s
            .split_once('=')
            .ok_or_else(|| PalsError::InvalidArgument(format!("filter `{s}` is not COLUMN=VALUE")))?;
        let value = val
            .trim()
            .parse::<f64>()
            .map_err(|_| PalsError::InvalidArgument(format!("filter value `{val}` is not numeric")))?;
        Ok(Self {
            column: col.parse().expect("infallible"),
            value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvOptions {
    pub response: ColumnRef,
    pub drop: Vec<ColumnRef>,
    pub exclude_where: Vec<RowFilter>,
}

impl CsvOptions {
    pub fn new(response: ColumnRef) -> Self {
        Self {
            response,
            drop: Vec::new(),
            exclude_where: Vec::new(),
        }
    }
}

/// Row accounting from [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_missing: usize,
    pub rows_excluded: usize,
}

const MISSING_TOKENS: &[&str] = &["", "NA", "na", "N/A", "NaN", "nan", "?", "."];

fn parse_cell(raw: &str) -> Option<Option<f64>> {
    let s = raw.trim();
    if MISSING_TOKENS.contains(&s) {
        return Some(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(Some(v)),
        Ok(_) => Some(None),
        Err(_) => None,
    }
}

/// Reads a headered, comma-delimited CSV file into a [`Dataset`].
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| PalsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, opts)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let response = opts
        .response
        .resolve(&header)
        .ok_or_else(|| PalsError::MissingResponse(opts.response.to_string()))?;
    let mut dropped = vec![false; header.len()];
    for c in &opts.drop {
        let j = c
            .resolve(&header)
            .ok_or_else(|| PalsError::MissingColumn(c.to_string()))?;
        dropped[j] = true;
    }
    let filters = opts
        .exclude_where
        .iter()
        .map(|f| {
            f.column
                .resolve(&header)
                .map(|j| (j, f.value))
                .ok_or_else(|| PalsError::MissingColumn(f.column.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<usize> = (0..header.len())
        .filter(|&j| j != response && !dropped[j])
        .collect();

    let mut report = LoadReport::default();
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        // data rows are numbered from 1, header excluded
        let row = idx + 1;
        report.rows_read += 1;
        let cell = |j: usize| -> Result<Option<f64>> {
            let raw = record.get(j).unwrap_or("");
            parse_cell(raw).ok_or_else(|| PalsError::NonNumeric {
                row,
                column: header[j].clone(),
                value: raw.to_string(),
            })
        };

        let mut excluded = false;
        for &(j, value) in &filters {
            if cell(j)? == Some(value) {
                excluded = true;
            }
        }
        if excluded {
            report.rows_excluded += 1;
            continue;
        }

        let y = cell(response)?;
        let mut values = Vec::with_capacity(kept.len());
        let mut missing = y.is_none();
        for &j in &kept {
            match cell(j)? {
                Some(v) => values.push(v),
                None => missing = true,
            }
        }
        if missing {
            report.rows_missing += 1;
            continue;
        }
        ys.push(y.expect("checked"));
        xs.extend(values);
    }
    report.rows_kept = ys.len();
    if report.rows_missing > 0 {
        warn!("rejected {} row(s) with missing values", report.rows_missing);
    }

    let x = DMatrix::from_row_slice(ys.len(), kept.len(), &xs);
    let names = kept.iter().map(|&j| header[j].clone()).collect();
    let data = Dataset::with_names(x, DVector::from_vec(ys), names, header[response].clone())?;
    Ok((data, report))
}
