//! Fixed-width numeric feature matrix with named columns and row ids.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("non-finite value at row {row}, column '{column}'")]
    NonFinite { row: usize, column: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("column '{name}' not found")]
    MissingColumn { name: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub row_ids: Vec<String>,
    pub column_names: Vec<String>,
    /// Row-major values, rows.len() == row_ids.len(), each row
    /// column_names.len() wide.
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(
        row_ids: Vec<String>,
        column_names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, TableError> {
        let mut seen = std::collections::BTreeSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(TableError::DuplicateColumn(name.clone()));
            }
        }
        if rows.len() != row_ids.len() {
            return Err(TableError::Shape(format!(
                "{} rows vs {} row ids",
                rows.len(),
                row_ids.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != column_names.len() {
                return Err(TableError::Shape(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    column_names.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(TableError::NonFinite {
                        row: i,
                        column: column_names[j].clone(),
                    });
                }
            }
        }
        Ok(FeatureTable {
            row_ids,
            column_names,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.n_cols(), |i, j| self.rows[i][j])
    }

    /// Horizontal concatenation; row ids must match in order.
    pub fn hconcat(&self, other: &FeatureTable) -> Result<FeatureTable, TableError> {
        if self.row_ids != other.row_ids {
            return Err(TableError::Shape("row ids differ".into()));
        }
        let mut names = self.column_names.clone();
        names.extend(other.column_names.iter().cloned());
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().chain(b.iter()).copied().collect())
            .collect();
        FeatureTable::new(self.row_ids.clone(), names, rows)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            row_ids: self.row_ids.clone(),
            column_names: indices
                .iter()
                .map(|&j| self.column_names[j].clone())
                .collect(),
            rows: self
                .rows
                .iter()
                .map(|r| indices.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
            column_names: self.column_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TableError> {
        let err = |e: String| TableError::Io {
            path: path.display().to_string(),
            message: e,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
        let mut header = vec!["row_id".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header).map_err(|e| err(e.to_string()))?;
        for (id, row) in self.row_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(|e| err(e.to_string()))?;
        }
        w.flush().map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureTable, TableError> {
        let err = |e: String| TableError::Io {
            path: path.display().to_string(),
            message: e,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
        let column_names: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        let mut row_ids = Vec::new();
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| err(e.to_string()))?;
            row_ids.push(record[0].to_string());
            let row: Result<Vec<f64>, _> = record.iter().skip(1).map(|s| s.parse()).collect();
            rows.push(row.map_err(|e: std::num::ParseFloatError| err(e.to_string()))?);
        }
        FeatureTable::new(row_ids, column_names, rows)
    }
}
