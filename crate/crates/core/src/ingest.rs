//! Loading benchmark CSV files (ETT, exchange-rate, ILI layouts) as a single
//! univariate target column.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::write_atomic;
use crate::error::{ForecastError, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Ett,
    Exchange,
    Ili,
    Generic,
}

impl DatasetFormat {
    /// Guesses the family from a dataset name such as "ETTh1" or "national_illness".
    pub fn infer(name: &str) -> Self {
        let n = name.to_ascii_lowercase();
        if n.starts_with("ett") {
            DatasetFormat::Ett
        } else if n.contains("ili") || n.contains("illness") {
            DatasetFormat::Ili
        } else if n.contains("exchange") {
            DatasetFormat::Exchange
        } else {
            DatasetFormat::Generic
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub name: String,
    #[serde(default)]
    pub format: Option<DatasetFormat>,
    /// Defaults to "OT" for ETT files and the last column otherwise.
    #[serde(default)]
    pub target_column: Option<String>,
    #[serde(default)]
    pub date_column: Option<String>,
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>, name: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            name: name.into(),
            format: None,
            target_column: None,
            date_column: None,
        }
    }

    pub fn resolved_format(&self) -> DatasetFormat {
        self.format.unwrap_or_else(|| DatasetFormat::infer(&self.name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: TimeSeries,
    pub target_column: String,
    pub rows: usize,
    pub skipped_trailing_blank_lines: usize,
}

pub fn load_csv(spec: &DatasetSpec) -> Result<LoadedSeries> {
    let text = fs::read_to_string(&spec.path).map_err(|e| ForecastError::io(&spec.path, e))?;
    let trailing_blank = text
        .lines()
        .rev()
        .take_while(|l| l.trim().is_empty())
        .count();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(ForecastError::EmptyData(format!(
            "{} has no header row",
            spec.path.display()
        )));
    }
    if let Some(date) = &spec.date_column {
        if !header.contains(date) {
            return Err(ForecastError::MissingColumn {
                requested: date.clone(),
                available: header,
            });
        }
    }
    let target = match (&spec.target_column, spec.resolved_format()) {
        (Some(c), _) => c.clone(),
        (None, DatasetFormat::Ett) => "OT".to_string(),
        (None, _) => header.last().cloned().unwrap_or_default(),
    };
    let col = header
        .iter()
        .position(|h| *h == target)
        .ok_or_else(|| ForecastError::MissingColumn {
            requested: target.clone(),
            available: header.clone(),
        })?;

    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = record.get(col).unwrap_or("");
        let v: f64 = cell.parse().map_err(|_| ForecastError::ParseValue {
            row,
            column: target.clone(),
            value: cell.to_string(),
        })?;
        if !v.is_finite() {
            return Err(ForecastError::ParseValue {
                row,
                column: target.clone(),
                value: cell.to_string(),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(ForecastError::EmptyData(format!(
            "{} has a header but no data rows",
            spec.path.display()
        )));
    }
    let rows = values.len();
    Ok(LoadedSeries {
        series: TimeSeries::new(spec.name.clone(), values)?,
        target_column: target,
        rows,
        skipped_trailing_blank_lines: trailing_blank,
    })
}

/// Writes `step,<column>` rows using shortest round-trip float formatting.
pub fn write_csv(series: &TimeSeries, column: &str, path: &Path) -> Result<()> {
    let mut out = format!("step,{column}\n");
    for (i, v) in series.values().iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    write_atomic(path, out.as_bytes())
}
