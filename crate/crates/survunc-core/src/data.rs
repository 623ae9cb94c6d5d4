//! Dataset representation, CSV ingestion, categorical encoding,
//! standardization, and train/validation/test splitting.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};
use crate::seed;

/// One subject: covariate vector, observed time, event indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub covariates: Vec<f64>,
    /// Time to event or censoring, strictly positive.
    pub time: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(covariates: Vec<f64>, time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time <= 0.0 {
            return Err(SurvError::InvalidArgument(format!(
                "time must be positive, got {time}"
            )));
        }
        Ok(Self {
            covariates,
            time,
            event,
        })
    }
}

/// Immutable collection of records sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    feature_names: Vec<String>,
    /// Which encoded columns hold real-valued (non one-hot) features.
    real_columns: Vec<bool>,
    /// Per-feature `(mean, stddev)` when standardization has been applied.
    /// `None` entries mark columns left untouched (one-hot or zero-variance).
    standardization: Option<Vec<Option<(f64, f64)>>>,
}

impl SurvivalDataset {
    pub fn new(
        records: Vec<SurvivalRecord>,
        feature_names: Vec<String>,
        real_columns: Vec<bool>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if real_columns.len() != d {
            return Err(SurvError::DimensionMismatch {
                expected: d,
                got: real_columns.len(),
            });
        }
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != d {
                return Err(SurvError::InvalidArgument(format!(
                    "record {i} has {} covariates, dataset declares {d}",
                    r.covariates.len()
                )));
            }
            if !r.time.is_finite() || r.time <= 0.0 {
                return Err(SurvError::InvalidArgument(format!(
                    "record {i} has non-positive time {}",
                    r.time
                )));
            }
        }
        Ok(Self {
            records,
            feature_names,
            real_columns,
            standardization: None,
        })
    }

    /// Convenience constructor marking every column real-valued.
    pub fn from_parts(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        Self::new(records, feature_names, vec![true; d])
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SurvivalRecord {
        &self.records[i]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn real_columns(&self) -> &[bool] {
        &self.real_columns
    }

    pub fn standardization(&self) -> Option<&Vec<Option<(f64, f64)>>> {
        self.standardization.as_ref()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Indices of uncensored records, in dataset order.
    pub fn event_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.records[i].event).collect()
    }

    /// New dataset holding the given rows (metadata carried over).
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            real_columns: self.real_columns.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Sorted distinct event times.
    pub fn distinct_event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.time)
            .collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup();
        t
    }
}

/// Strictly increasing evaluation abscissae for survival curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(SurvError::InvalidArgument("empty time grid".into()));
        }
        if times[0] < 0.0 || !times[0].is_finite() {
            return Err(SurvError::InvalidArgument(format!(
                "grid must start at a finite non-negative time, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(SurvError::InvalidArgument(format!(
                    "grid times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the last grid point `<= t`, or `None` when `t` precedes the grid.
    pub fn step_index(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&g| g <= t);
        k.checked_sub(1)
    }
}

/// Non-increasing step function `S(t)` sampled on a grid.
///
/// Evaluation between grid points is right-continuous step interpolation;
/// `S(t) = 1` for `t` below the first grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    grid: TimeGrid,
    probabilities: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(grid: TimeGrid, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != grid.len() {
            return Err(SurvError::DimensionMismatch {
                expected: grid.len(),
                got: probabilities.len(),
            });
        }
        let mut prev = 1.0f64 + 1e-12;
        for &p in &probabilities {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(SurvError::InvalidArgument(format!(
                    "survival probability {p} outside [0, 1]"
                )));
            }
            if p > prev + 1e-12 {
                return Err(SurvError::InvalidArgument(
                    "survival probabilities must be non-increasing".into(),
                ));
            }
            prev = p;
        }
        Ok(Self {
            grid,
            probabilities,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// `S(t)` by right-continuous step interpolation.
    pub fn eval(&self, t: f64) -> f64 {
        match self.grid.step_index(t) {
            Some(k) => self.probabilities[k],
            None => 1.0,
        }
    }

    /// Left limit `S(t-)`: the value just before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.grid.times().partition_point(|&g| g < t);
        match k.checked_sub(1) {
            Some(k) => self.probabilities[k],
            None => 1.0,
        }
    }

    /// Step this curve onto another grid.
    pub fn resample(&self, grid: &TimeGrid) -> SurvivalCurve {
        let probabilities = grid.times().iter().map(|&t| self.eval(t)).collect();
        SurvivalCurve {
            grid: grid.clone(),
            probabilities,
        }
    }

    /// Median survival time `min{t in grid | S(t) <= 0.5}`.
    ///
    /// Returns `(time, crossed)`; when the curve never reaches 0.5 the last
    /// grid time is returned with `crossed = false`.
    pub fn median_time(&self) -> (f64, bool) {
        for (k, &p) in self.probabilities.iter().enumerate() {
            if p <= 0.5 {
                return (self.grid.times()[k], true);
            }
        }
        (*self.grid.times().last().unwrap(), false)
    }
}

/// Disjoint train/validation/test row indices covering a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub duration_col: String,
    pub event_col: String,
    /// Feature columns to one-hot encode; all other feature columns parse as reals.
    pub categorical_cols: Vec<String>,
}

fn csv_err(row: usize, column: &str, message: impl Into<String>) -> SurvError {
    SurvError::Csv {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Load a survival dataset from a headered CSV file.
///
/// Categorical columns are one-hot encoded with category order equal to
/// first appearance in the file. Missing values are rejected.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| SurvError::InvalidArgument(format!("cannot open csv: {e}")))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| SurvError::InvalidArgument(format!("cannot read header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let col_index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let duration_idx = *col_index
        .get(schema.duration_col.as_str())
        .ok_or_else(|| SurvError::InvalidArgument(format!(
            "unknown duration column `{}`",
            schema.duration_col
        )))?;
    let event_idx = *col_index
        .get(schema.event_col.as_str())
        .ok_or_else(|| SurvError::InvalidArgument(format!(
            "unknown event column `{}`",
            schema.event_col
        )))?;
    if duration_idx == event_idx {
        return Err(SurvError::InvalidArgument(
            "duration and event columns must differ".into(),
        ));
    }
    for c in &schema.categorical_cols {
        if !col_index.contains_key(c.as_str()) {
            return Err(SurvError::InvalidArgument(format!(
                "unknown categorical column `{c}`"
            )));
        }
        if c == &schema.duration_col || c == &schema.event_col {
            return Err(SurvError::InvalidArgument(format!(
                "column `{c}` cannot be both categorical and duration/event"
            )));
        }
    }

    // Feature columns in header order.
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != duration_idx && i != event_idx)
        .collect();
    if feature_cols.is_empty() {
        return Err(SurvError::InvalidArgument(
            "schema must leave at least one feature column".into(),
        ));
    }
    let is_categorical: Vec<bool> = feature_cols
        .iter()
        .map(|&i| schema.categorical_cols.iter().any(|c| c == &headers[i]))
        .collect();

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec =
            rec.map_err(|e| csv_err(r + 1, "<row>", format!("malformed row: {e}")))?;
        if rec.len() != headers.len() {
            return Err(csv_err(
                r + 1,
                "<row>",
                format!("expected {} fields, got {}", headers.len(), rec.len()),
            ));
        }
        rows.push(rec);
    }

    // Category values per categorical column, first-appearance order.
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    for (r, rec) in rows.iter().enumerate() {
        for (f, &col) in feature_cols.iter().enumerate() {
            if !is_categorical[f] {
                continue;
            }
            let v = rec[col].trim();
            if v.is_empty() {
                return Err(csv_err(r + 1, &headers[col], "missing value"));
            }
            if !categories[f].iter().any(|c| c == v) {
                categories[f].push(v.to_string());
            }
        }
    }

    let mut feature_names = Vec::new();
    let mut real_columns = Vec::new();
    for (f, &col) in feature_cols.iter().enumerate() {
        if is_categorical[f] {
            for cat in &categories[f] {
                feature_names.push(format!("{}={}", headers[col], cat));
                real_columns.push(false);
            }
        } else {
            feature_names.push(headers[col].clone());
            real_columns.push(true);
        }
    }

    let mut records = Vec::with_capacity(rows.len());
    for (r, rec) in rows.iter().enumerate() {
        let row_no = r + 1;
        let dur_str = rec[duration_idx].trim();
        if dur_str.is_empty() {
            return Err(csv_err(row_no, &headers[duration_idx], "missing value"));
        }
        let time: f64 = dur_str.parse().map_err(|_| {
            csv_err(
                row_no,
                &headers[duration_idx],
                format!("cannot parse duration `{dur_str}`"),
            )
        })?;
        if !time.is_finite() || time <= 0.0 {
            return Err(csv_err(
                row_no,
                &headers[duration_idx],
                format!("duration must be positive, got `{dur_str}`"),
            ));
        }
        let ev_str = rec[event_idx].trim();
        if ev_str.is_empty() {
            return Err(csv_err(row_no, &headers[event_idx], "missing value"));
        }
        let event = match ev_str {
            "0" => false,
            "1" => true,
            other => {
                // Accept float spellings of exactly 0 and 1.
                match other.parse::<f64>() {
                    Ok(v) if v == 0.0 || v == 1.0 => v == 1.0,
                    _ => {
                        return Err(csv_err(
                            row_no,
                            &headers[event_idx],
                            format!("event must be 0 or 1, got `{other}`"),
                        ))
                    }
                }
            }
        };

        let mut covariates = Vec::with_capacity(feature_names.len());
        for (f, &col) in feature_cols.iter().enumerate() {
            let v = rec[col].trim();
            if v.is_empty() {
                return Err(csv_err(row_no, &headers[col], "missing value"));
            }
            if is_categorical[f] {
                for cat in &categories[f] {
                    covariates.push(if v == cat { 1.0 } else { 0.0 });
                }
            } else {
                let x: f64 = v.parse().map_err(|_| {
                    csv_err(
                        row_no,
                        &headers[col],
                        format!("cannot parse number `{v}`"),
                    )
                })?;
                if !x.is_finite() {
                    return Err(csv_err(row_no, &headers[col], "non-finite value"));
                }
                covariates.push(x);
            }
        }
        records.push(SurvivalRecord {
            covariates,
            time,
            event,
        });
    }

    SurvivalDataset::new(records, feature_names, real_columns)
}

/// Write an encoded dataset back to CSV.
///
/// Doubles are formatted with 17 significant digits so a reload reproduces
/// them bitwise.
pub fn write_csv(
    dataset: &SurvivalDataset,
    path: impl AsRef<Path>,
    duration_col: &str,
    event_col: &str,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let mut header: Vec<String> = dataset.feature_names().to_vec();
    header.push(duration_col.to_string());
    header.push(event_col.to_string());
    writeln!(out, "{}", header.join(","))?;
    for rec in dataset.records() {
        let mut fields: Vec<String> = rec
            .covariates
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        fields.push(format!("{:.16e}", rec.time));
        fields.push(if rec.event { "1".into() } else { "0".into() });
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Fit per-column standardization parameters on `fit_on` rows and apply them
/// to every row. Only real-valued columns are touched; zero-variance columns
/// are left unscaled with a warning.
pub fn standardize(dataset: &SurvivalDataset, fit_on: &[usize]) -> Result<SurvivalDataset> {
    let params = fit_standardization(dataset, fit_on)?;
    Ok(apply_standardization(dataset, &params))
}

/// Per-feature `(mean, population stddev)` of `fit_on` rows; `None` for
/// one-hot and zero-variance columns.
pub fn fit_standardization(
    dataset: &SurvivalDataset,
    fit_on: &[usize],
) -> Result<Vec<Option<(f64, f64)>>> {
    if fit_on.is_empty() {
        return Err(SurvError::InvalidArgument(
            "standardization needs a non-empty fit set".into(),
        ));
    }
    for &i in fit_on {
        if i >= dataset.n() {
            return Err(SurvError::InvalidArgument(format!(
                "fit index {i} out of range (n={})",
                dataset.n()
            )));
        }
    }
    let d = dataset.d();
    let m = fit_on.len() as f64;
    let mut params = vec![None; d];
    for (j, slot) in params.iter_mut().enumerate() {
        if !dataset.real_columns()[j] {
            continue;
        }
        let mean = fit_on
            .iter()
            .map(|&i| dataset.record(i).covariates[j])
            .sum::<f64>()
            / m;
        let var = fit_on
            .iter()
            .map(|&i| {
                let z = dataset.record(i).covariates[j] - mean;
                z * z
            })
            .sum::<f64>()
            / m;
        let std = var.sqrt();
        if std == 0.0 {
            log::warn!(
                "column `{}` has zero variance on the fit set; left unscaled",
                dataset.feature_names()[j]
            );
            continue;
        }
        *slot = Some((mean, std));
    }
    Ok(params)
}

/// Apply previously fitted standardization parameters to a dataset (e.g. the
/// validation/test partitions, or out-of-distribution data).
pub fn apply_standardization(
    dataset: &SurvivalDataset,
    params: &[Option<(f64, f64)>],
) -> SurvivalDataset {
    assert_eq!(params.len(), dataset.d(), "parameter/column count mismatch");
    let records = dataset
        .records()
        .iter()
        .map(|r| {
            let covariates = r
                .covariates
                .iter()
                .zip(params.iter())
                .map(|(&x, p)| match p {
                    Some((mean, std)) => (x - mean) / std,
                    None => x,
                })
                .collect();
            SurvivalRecord {
                covariates,
                time: r.time,
                event: r.event,
            }
        })
        .collect();
    SurvivalDataset {
        records,
        feature_names: dataset.feature_names().to_vec(),
        real_columns: dataset.real_columns().to_vec(),
        standardization: Some(params.to_vec()),
    }
}

/// Random train/validation/test split.
///
/// Partition sizes are floor allocations of the ratios with the remainder
/// assigned to train; deterministic for a fixed seed.
pub fn split(n: usize, ratios: (f64, f64, f64), seed_value: u64) -> Result<SplitAssignment> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(SurvError::InvalidArgument(
            "split ratios must be non-negative".into(),
        ));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(SurvError::InvalidArgument(format!(
            "split ratios must sum to 1, got {}",
            a + b + c
        )));
    }
    let n_train = (n as f64 * a).floor() as usize;
    let n_val = (n as f64 * b).floor() as usize;
    let n_test = (n as f64 * c).floor() as usize;
    let n_train = n_train + (n - (n_train + n_val + n_test));

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed_value, "split", 0);
    order.shuffle(&mut rng);

    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment { train, val, test })
}
