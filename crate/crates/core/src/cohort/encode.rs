//! Static-feature encoding: standard scaling for numeric columns with
//! mean-imputation plus missing-indicator columns, one-hot for
//! categorical columns. Statistics come from the fitting cohort only.

use serde::{Deserialize, Serialize};

use super::{numeric_column, Cohort, CohortError, Sex, NUMERIC_COLUMNS};
use crate::features::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    /// Canonical numeric column names to encode.
    pub numeric_columns: Vec<String>,
    /// Whether to one-hot encode SEX.
    pub encode_sex: bool,
    /// Emit a binary missing-indicator column per input column.
    pub missing_indicators: bool,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        EncodingSpec {
            numeric_columns: NUMERIC_COLUMNS.iter().map(|c| c.name.to_string()).collect(),
            encode_sex: true,
            missing_indicators: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncodedColumn {
    /// Standard-scaled numeric column. `zero_variance` flags a column
    /// whose std was clamped to 1.
    Numeric {
        source: String,
        mean: f64,
        std: f64,
        zero_variance: bool,
    },
    /// One-hot indicator for a categorical level.
    Category { source: String, level: String },
    /// 1.0 where the source column was missing.
    MissingIndicator { source: String },
}

impl EncodedColumn {
    pub fn name(&self) -> String {
        match self {
            EncodedColumn::Numeric { source, .. } => source.clone(),
            EncodedColumn::Category { source, level } => format!("{source}={level}"),
            EncodedColumn::MissingIndicator { source } => format!("{source}__missing"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub spec: EncodingSpec,
    pub columns: Vec<EncodedColumn>,
    /// SEX levels observed during fitting, fixed order.
    pub sex_levels: Vec<String>,
}

fn column_values(cohort: &Cohort, name: &str) -> Vec<Option<f64>> {
    let col = numeric_column(name).expect("validated column name");
    cohort
        .patients
        .iter()
        .map(|p| (col.get)(&p.static_features))
        .collect()
}

/// Fits per-column mean/std (population std) on the training cohort.
pub fn fit_static_encoder(train: &Cohort, spec: &EncodingSpec) -> Result<EncoderState, CohortError> {
    if train.is_empty() {
        return Err(CohortError::EmptyTrain);
    }
    for name in &spec.numeric_columns {
        if numeric_column(name).is_none() {
            return Err(CohortError::Schema(format!(
                "unknown numeric column '{name}' in encoding spec"
            )));
        }
    }

    let mut columns = Vec::new();
    for name in &spec.numeric_columns {
        let values = column_values(train, name);
        let present: Vec<f64> = values.iter().filter_map(|v| *v).collect();
        let (mean, std, zero_variance) = if present.is_empty() {
            // All missing: imputed value 0, scale identity.
            (0.0, 1.0, true)
        } else {
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            let var =
                present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / present.len() as f64;
            let std = var.sqrt();
            if std > 0.0 {
                (mean, std, false)
            } else {
                (mean, 1.0, true)
            }
        };
        columns.push(EncodedColumn::Numeric {
            source: name.clone(),
            mean,
            std,
            zero_variance,
        });
        if spec.missing_indicators {
            columns.push(EncodedColumn::MissingIndicator {
                source: name.clone(),
            });
        }
    }

    let mut sex_levels = Vec::new();
    if spec.encode_sex {
        for level in [Sex::F, Sex::M] {
            if train
                .patients
                .iter()
                .any(|p| p.static_features.sex == Some(level))
            {
                sex_levels.push(level.as_str().to_string());
            }
        }
        for level in &sex_levels {
            columns.push(EncodedColumn::Category {
                source: "SEX".into(),
                level: level.clone(),
            });
        }
        if spec.missing_indicators {
            columns.push(EncodedColumn::MissingIndicator {
                source: "SEX".into(),
            });
        }
    }

    Ok(EncoderState {
        spec: spec.clone(),
        columns,
        sex_levels,
    })
}

/// Applies a fitted encoder. Column count and order are fixed by the
/// encoder state; unseen categories produce an all-zero block.
pub fn encode_static(cohort: &Cohort, enc: &EncoderState) -> FeatureTable {
    let mut rows = Vec::with_capacity(cohort.len());
    for p in &cohort.patients {
        if enc.spec.encode_sex {
            if let Some(s) = p.static_features.sex {
                if !enc.sex_levels.iter().any(|l| l == s.as_str()) {
                    log::warn!(
                        "patient {}: unseen SEX level '{}', emitting zero block",
                        p.patient_id,
                        s.as_str()
                    );
                }
            }
        }
        let mut row = Vec::with_capacity(enc.columns.len());
        for col in &enc.columns {
            let v = match col {
                EncodedColumn::Numeric {
                    source, mean, std, ..
                } => {
                    let raw = (numeric_column(source).expect("fitted column").get)(
                        &p.static_features,
                    );
                    // Mean-imputation maps missing to exactly 0 after scaling.
                    match raw {
                        Some(v) => (v - mean) / std,
                        None => 0.0,
                    }
                }
                EncodedColumn::Category { level, .. } => match p.static_features.sex {
                    Some(s) if s.as_str() == level => 1.0,
                    _ => 0.0,
                },
                EncodedColumn::MissingIndicator { source } => {
                    let missing = if source == "SEX" {
                        p.static_features.sex.is_none()
                    } else {
                        (numeric_column(source).expect("fitted column").get)(&p.static_features)
                            .is_none()
                    };
                    if missing {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            row.push(v);
        }
        rows.push(row);
    }

    let row_ids = cohort.patients.iter().map(|p| p.patient_id.clone()).collect();
    let names = enc.columns.iter().map(|c| c.name()).collect();
    FeatureTable::new(row_ids, names, rows).expect("encoder output is rectangular and finite")
}
