//! CSV ingestion and the drop/encode/standardize preprocessing pipeline.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// First-appearance integer encoder for categorical values.
#[derive(Default)]
struct FirstSeen {
    codes: HashMap<String, usize>,
    order: Vec<String>,
}

impl FirstSeen {
    fn code(&mut self, value: &str) -> usize {
        if let Some(&c) = self.codes.get(value) {
            return c;
        }
        let c = self.order.len();
        self.codes.insert(value.to_string(), c);
        self.order.push(value.to_string());
        c
    }

    fn len(&self) -> usize {
        self.order.len()
    }

    fn into_names(self) -> Vec<String> {
        self.order
    }
}

/// A parsed CSV: header row plus string cells, nothing interpreted yet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<RawTable> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let headers = csv_reader
            .headers()
            .map_err(|e| Error::Data(format!("reading CSV header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in csv_reader.records() {
            let record = record.map_err(|e| Error::Data(format!("reading CSV row: {e}")))?;
            rows.push(record.iter().map(|v| v.trim().to_string()).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<RawTable> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Data(format!("opening {}: {e}", path.as_ref().display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }
}

/// How a single cell reads as a number.
enum CellKind {
    Finite(f64),
    /// Empty, `NaN`, `Inf`, `Infinity` and friends (case-insensitive); the row
    /// carrying it gets dropped when the column is numeric.
    Missing,
    Text,
}

fn classify_cell(value: &str) -> CellKind {
    if value.is_empty() {
        return CellKind::Missing;
    }
    // f64 parsing already accepts inf/infinity/nan in any case.
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => CellKind::Finite(v),
        Ok(_) => CellKind::Missing,
        Err(_) => CellKind::Text,
    }
}

/// Result of dropping bad rows and encoding all columns to numbers,
/// before any standardization.
#[derive(Clone, Debug)]
pub struct EncodedTable {
    /// Numeric feature matrix over surviving rows.
    pub x: Array2<f64>,
    /// Class ids in first-appearance order of the label column.
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    /// Label names, indexed by class id.
    pub label_names: Vec<String>,
    /// Original row numbers (0-based, data rows only) that survived.
    pub kept_rows: Vec<usize>,
}

/// Drop rows with non-finite numerics, integer-encode categorical columns by
/// first appearance, and map the label column to ids `0..c-1`.
pub fn encode_table(raw: &RawTable, label_column: &str) -> Result<EncodedTable> {
    let label_idx = raw
        .headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("no label column named {label_column:?}")))?;
    let feature_cols: Vec<usize> = (0..raw.headers.len()).filter(|&i| i != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(Error::Data("zero feature columns".into()));
    }
    for (row_no, row) in raw.rows.iter().enumerate() {
        if row.len() != raw.headers.len() {
            return Err(Error::Data(format!(
                "row {row_no} has {} cells, header has {}",
                row.len(),
                raw.headers.len()
            )));
        }
    }

    // A column is numeric when no cell is text; rows with missing or
    // non-finite values in numeric columns get dropped.
    let mut numeric = vec![false; raw.headers.len()];
    for &col in &feature_cols {
        let any_text = raw
            .rows
            .iter()
            .any(|row| matches!(classify_cell(&row[col]), CellKind::Text));
        numeric[col] = !any_text;
    }

    let kept_rows: Vec<usize> = (0..raw.rows.len())
        .filter(|&r| {
            feature_cols.iter().all(|&col| {
                !numeric[col] || matches!(classify_cell(&raw.rows[r][col]), CellKind::Finite(_))
            })
        })
        .collect();
    if kept_rows.is_empty() {
        return Err(Error::Data(
            "zero usable rows after dropping non-finite values".into(),
        ));
    }

    let n = kept_rows.len();
    let d = feature_cols.len();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut encoders: Vec<Option<FirstSeen>> = feature_cols
        .iter()
        .map(|&col| {
            if numeric[col] {
                None
            } else {
                Some(FirstSeen::default())
            }
        })
        .collect();
    for (out_row, &r) in kept_rows.iter().enumerate() {
        for (out_col, &col) in feature_cols.iter().enumerate() {
            let cell = &raw.rows[r][col];
            x[[out_row, out_col]] = match &mut encoders[out_col] {
                None => match classify_cell(cell) {
                    CellKind::Finite(v) => v,
                    _ => unreachable!("non-finite cell in kept row"),
                },
                Some(enc) => enc.code(cell) as f64,
            };
        }
    }

    let mut label_encoder = FirstSeen::default();
    let y: Vec<usize> = kept_rows
        .iter()
        .map(|&r| label_encoder.code(&raw.rows[r][label_idx]))
        .collect();
    let n_classes = label_encoder.len();

    Ok(EncodedTable {
        x,
        y,
        n_classes,
        feature_names: feature_cols
            .iter()
            .map(|&c| raw.headers[c].clone())
            .collect(),
        label_names: label_encoder.into_names(),
        kept_rows,
    })
}

/// Per-column z-score transform. A constant column (sigma == 0) keeps
/// sigma = 1 so it standardizes to all zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fit column statistics, optionally restricted to a row subset
    /// (e.g. the training split).
    pub fn fit(x: &Array2<f64>, rows: Option<&[usize]>) -> Result<Standardizer> {
        let owned_rows: Vec<usize>;
        let rows: &[usize] = match rows {
            Some(r) => r,
            None => {
                owned_rows = (0..x.nrows()).collect();
                &owned_rows
            }
        };
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = rows.len() as f64;
        let d = x.ncols();
        let mut means = vec![0.0; d];
        let mut stds = vec![0.0; d];
        for col in 0..d {
            let mut sum = 0.0;
            for &r in rows {
                sum += x[[r, col]];
            }
            let mean = sum / n;
            let mut var = 0.0;
            for &r in rows {
                let dev = x[[r, col]] - mean;
                var += dev * dev;
            }
            let sigma = (var / n).sqrt();
            means[col] = mean;
            stds[col] = if sigma == 0.0 { 1.0 } else { sigma };
        }
        Ok(Standardizer { means, stds })
    }

    pub fn apply(&self, x: &mut Array2<f64>) -> Result<()> {
        if x.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fitted on {} columns, input has {}",
                self.means.len(),
                x.ncols()
            )));
        }
        for col in 0..x.ncols() {
            let mean = self.means[col];
            let std = self.stds[col];
            for v in x.column_mut(col) {
                *v = (*v - mean) / std;
            }
        }
        Ok(())
    }
}

/// Full preprocessing of one table: drop non-finite rows, encode
/// categoricals and labels, then z-score with this table's own statistics.
/// The fitted `Standardizer` is returned for reuse on held-out data.
pub fn preprocess(raw: &RawTable, label_column: &str) -> Result<(Dataset, Standardizer)> {
    let encoded = encode_table(raw, label_column)?;
    let standardizer = Standardizer::fit(&encoded.x, None)?;
    let mut x = encoded.x;
    standardizer.apply(&mut x)?;
    let dataset = Dataset::new(x, encoded.y, encoded.n_classes, encoded.feature_names)?;
    Ok((dataset, standardizer))
}
