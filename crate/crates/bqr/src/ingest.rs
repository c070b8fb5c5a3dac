//! Dataset ingestion, standardization, and response-quantile banding.
//!
//! The file format is plain text: a whitespace-separated header line
//! followed by one row per line with exactly one numeric token per
//! column. Rows containing a missing marker (`.`, `NA`, or an empty
//! token) are dropped whole and counted. The missing-marker set is a
//! convention of this crate, not something the source format pins down.

use std::collections::HashSet;
use std::io::BufRead;

use crate::{Error, Result};

/// Missing-value markers recognized during ingestion.
const MISSING_MARKERS: [&str; 2] = [".", "NA"];

/// Rectangular table of named numeric columns.
///
/// Immutable after construction; all columns share a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    column_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    region_column: Option<String>,
}

impl Dataset {
    /// Build a dataset from parallel name/column vectors.
    pub fn new(column_names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if column_names.len() != columns.len() {
            return Err(Error::InvalidArgument(
                "column name count does not match column count".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        for (name, col) in column_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "column `{name}` has length {} but expected {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Dataset {
            column_names,
            columns,
            region_column: None,
        })
    }

    /// Number of rows.
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column_names.iter().any(|c| c == name)
    }

    /// Designate a column as holding integer region identifiers.
    pub fn set_region_column(&mut self, name: &str) -> Result<()> {
        let col = self.column(name)?;
        for (i, v) in col.iter().enumerate() {
            if v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "region column `{name}` has non-integer value {v} at row {i}"
                )));
            }
        }
        self.region_column = Some(name.to_string());
        Ok(())
    }

    pub fn region_column(&self) -> Option<&str> {
        self.region_column.as_deref()
    }

    /// Region identifiers as integers, in row order.
    pub fn region_values(&self) -> Result<Vec<i64>> {
        let name = self
            .region_column
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no region column designated".into()))?;
        Ok(self.column(name)?.iter().map(|v| *v as i64).collect())
    }

    /// Serialize to the ingest text format with full round-trip precision.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.column_names.join(" "));
        out.push('\n');
        for i in 0..self.n_rows() {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{}", c[i])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Per-column transform record, sufficient to undo standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScale {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Means and sample standard deviations used by [`standardize`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StandardizationReport {
    pub scales: Vec<ColumnScale>,
}

impl StandardizationReport {
    pub fn scale_for(&self, name: &str) -> Option<&ColumnScale> {
        self.scales.iter().find(|s| s.name == name)
    }

    /// Map a standardized value back to the original scale of `name`.
    /// Identity for columns that were not transformed.
    pub fn destandardize(&self, name: &str, value: f64) -> f64 {
        match self.scale_for(name) {
            Some(s) => value * s.sd + s.mean,
            None => value,
        }
    }
}

/// Quantile band label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Low,
    Mid,
    High,
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Band::Low => write!(f, "LOW"),
            Band::Mid => write!(f, "MID"),
            Band::High => write!(f, "HIGH"),
        }
    }
}

/// Read a whitespace-delimited dataset; returns the dataset and the
/// number of rows dropped for containing a missing marker.
pub fn read_raw<R: BufRead>(source: R) -> Result<(Dataset, usize)> {
    let mut lines = source.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((lineno, line)) => {
                let line = line.map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty input: missing header line".into(),
                })
            }
        }
    };
    let names: Vec<String> = header.split_whitespace().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for name in &names {
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let width = names.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); width];
    let mut dropped = 0usize;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != width {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {width} tokens, found {}", tokens.len()),
            });
        }
        if tokens.iter().any(|t| MISSING_MARKERS.contains(t)) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(width);
        for (name, tok) in names.iter().zip(&tokens) {
            let value: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("column `{name}`: cannot parse `{tok}` as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("column `{name}`: non-finite value `{tok}`"),
                });
            }
            row.push(value);
        }
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
    }
    if columns.first().map_or(0, Vec::len) == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((Dataset::new(names, columns)?, dropped))
}

/// Replace each named column with `(value - mean) / sd` using the sample
/// standard deviation (divisor n-1). Returns the transformed dataset and
/// the scales needed to back-transform.
pub fn standardize(d: &Dataset, cols: &[String]) -> Result<(Dataset, StandardizationReport)> {
    let mut out = d.clone();
    let mut report = StandardizationReport::default();
    for name in cols {
        let idx = out
            .column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
        let col = &mut out.columns[idx];
        let n = col.len();
        if n < 2 {
            return Err(Error::ConstantColumn(name.clone()));
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if sd <= 0.0 {
            return Err(Error::ConstantColumn(name.clone()));
        }
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
        report.scales.push(ColumnScale {
            name: name.clone(),
            mean,
            sd,
        });
    }
    Ok((out, report))
}

/// Sample quantile by linear interpolation of order statistics at
/// position h = (n-1)p + 1 (one-indexed). This is the single quantile
/// rule used throughout the crate.
pub fn sample_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample("sample_quantile"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "quantile fraction {p} outside [0, 1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[n - 1])
    }
}

/// Assign each value to a band: LOW iff value <= q(low_q), HIGH iff
/// value >= q(high_q), MID otherwise.
pub fn quantile_bands(values: &[f64], low_q: f64, high_q: f64) -> Result<Vec<Band>> {
    if !(0.0 < low_q && low_q < high_q && high_q < 1.0) {
        return Err(Error::InvalidBandFractions {
            low: low_q,
            high: high_q,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let ql = sample_quantile(values, low_q)?;
    let qh = sample_quantile(values, high_q)?;
    if ql == qh {
        return Err(Error::DegenerateSpread {
            low: low_q,
            high: high_q,
            value: ql,
        });
    }
    Ok(values
        .iter()
        .map(|&v| {
            if v <= ql {
                Band::Low
            } else if v >= qh {
                Band::High
            } else {
                Band::Mid
            }
        })
        .collect())
}
