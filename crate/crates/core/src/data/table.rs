use std::path::Path;

use crate::error::{Error, Result};

/// A numeric table read from a headered CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads a UTF-8 CSV with a header row and numeric cells ('.' decimal
/// separator). Row numbers in errors are 1-based data rows.
pub fn read_csv(path: &Path) -> Result<Table> {
    let ingest = |row: Option<usize>, column: Option<String>, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    if !path.exists() {
        return Err(ingest(None, None, "file not found".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(None, None, e.to_string()))?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(None, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(ingest(None, None, "missing header row".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingest(Some(i + 1), None, e.to_string()))?;
        if record.len() != columns.len() {
            return Err(ingest(
                Some(i + 1),
                None,
                format!("expected {} fields, found {}", columns.len(), record.len()),
            ));
        }
        let row = record
            .iter()
            .zip(&columns)
            .map(|(cell, col)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ingest(Some(i + 1), Some(col.clone()), format!("non-numeric cell {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ingest(None, None, "no data rows".into()));
    }
    Ok(Table { columns, rows })
}
