//! Cohort serialization: a csv pair (patients.csv + samples.csv) or a
//! single JSON file carrying the same fields.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use super::{
    ChannelId, Cohort, CohortError, DigitalChannel, PatientRecord, StaticFeatures, Sex,
    NUMERIC_COLUMNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortFormat {
    /// Directory containing `patients.csv` and `samples.csv`.
    CsvPair,
    /// Single JSON file.
    Json,
}

fn io_err(path: &Path, source: std::io::Error) -> CohortError {
    CohortError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> CohortError {
    CohortError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn load_cohort(path: &Path, format: CohortFormat) -> Result<Cohort, CohortError> {
    let cohort = match format {
        CohortFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str::<Cohort>(&text)
                .map_err(|e| parse_err(path.display().to_string(), e.to_string()))?
        }
        CohortFormat::CsvPair => load_csv_pair(path)?,
    };
    cohort.validate()?;
    Ok(cohort)
}

pub fn save_cohort(cohort: &Cohort, path: &Path, format: CohortFormat) -> Result<(), CohortError> {
    match format {
        CohortFormat::Json => {
            let text = serde_json::to_string_pretty(cohort).expect("cohort serializes");
            std::fs::write(path, text).map_err(|e| io_err(path, e))
        }
        CohortFormat::CsvPair => save_csv_pair(cohort, path),
    }
}

fn patient_header() -> Vec<&'static str> {
    let mut header = vec!["patient_id", "enrollment_date"];
    header.push("SEX");
    header.extend(NUMERIC_COLUMNS.iter().map(|c| c.name));
    header.push("LABEL_W48");
    header.push("LABEL_W72");
    header
}

fn load_csv_pair(dir: &Path) -> Result<Cohort, CohortError> {
    let patients_path = dir.join("patients.csv");
    let samples_path = dir.join("samples.csv");
    let mut errors: Vec<CohortError> = Vec::new();

    let mut reader = csv::Reader::from_path(&patients_path)
        .map_err(|e| parse_err(patients_path.display().to_string(), e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(patients_path.display().to_string(), e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let expected = patient_header();
    if header != expected {
        return Err(CohortError::Schema(format!(
            "patients.csv header mismatch, expected {expected:?}"
        )));
    }

    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (row_no, record) in reader.records().enumerate() {
        let loc = format!("patients.csv row {}", row_no + 2);
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(parse_err(loc, e.to_string()));
                continue;
            }
        };
        match parse_patient_row(&record, &loc) {
            Ok(p) => {
                if index.contains_key(&p.patient_id) {
                    errors.push(CohortError::Schema(format!(
                        "{loc}: duplicate patient_id '{}'",
                        p.patient_id
                    )));
                } else {
                    index.insert(p.patient_id.clone(), patients.len());
                    patients.push(p);
                }
            }
            Err(e) => errors.push(e),
        }
    }

    let mut reader = csv::Reader::from_path(&samples_path)
        .map_err(|e| parse_err(samples_path.display().to_string(), e.to_string()))?;
    for (row_no, record) in reader.records().enumerate() {
        let loc = format!("samples.csv row {}", row_no + 2);
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(parse_err(loc, e.to_string()));
                continue;
            }
        };
        if let Err(e) = parse_sample_row(&record, &loc, &index, &mut patients) {
            errors.push(e);
        }
    }

    if !errors.is_empty() {
        return Err(CohortError::ParseErrors { errors });
    }

    // samples.csv rows may arrive out of order; sort and re-validate.
    for p in &mut patients {
        for ch in &mut p.channels {
            ch.samples.sort_by_key(|&(day, _)| day);
        }
    }

    Ok(Cohort::new(patients, dir.display().to_string()))
}

fn parse_opt_f64(field: &str, loc: &str, col: &str) -> Result<Option<f64>, CohortError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|e| parse_err(loc, format!("column {col}: {e}")))
}

fn parse_opt_bool(field: &str, loc: &str, col: &str) -> Result<Option<bool>, CohortError> {
    match field {
        "" => Ok(None),
        "0" | "false" => Ok(Some(false)),
        "1" | "true" => Ok(Some(true)),
        other => Err(parse_err(
            loc,
            format!("column {col}: invalid boolean '{other}'"),
        )),
    }
}

fn parse_patient_row(record: &csv::StringRecord, loc: &str) -> Result<PatientRecord, CohortError> {
    let mut fields = record.iter();
    let patient_id = fields
        .next()
        .ok_or_else(|| parse_err(loc, "missing patient_id"))?
        .to_string();
    if patient_id.is_empty() {
        return Err(parse_err(loc, "empty patient_id"));
    }
    let date_str = fields
        .next()
        .ok_or_else(|| parse_err(loc, "missing enrollment_date"))?;
    let enrollment_date = NaiveDate::from_str(date_str)
        .map_err(|e| parse_err(loc, format!("enrollment_date: {e}")))?;

    let sex_str = fields.next().ok_or_else(|| parse_err(loc, "missing SEX"))?;
    let sex = match sex_str {
        "" => None,
        "F" => Some(Sex::F),
        "M" => Some(Sex::M),
        other => return Err(parse_err(loc, format!("SEX: invalid value '{other}'"))),
    };

    let mut statics = StaticFeatures {
        sex,
        ..Default::default()
    };
    for col in NUMERIC_COLUMNS {
        let field = fields
            .next()
            .ok_or_else(|| parse_err(loc, format!("missing column {}", col.name)))?;
        if let Some(v) = parse_opt_f64(field, loc, col.name)? {
            (col.set)(&mut statics, v);
        }
    }
    statics
        .validate()
        .map_err(|msg| parse_err(loc, msg))?;

    let label_w48 = parse_opt_bool(
        fields
            .next()
            .ok_or_else(|| parse_err(loc, "missing LABEL_W48"))?,
        loc,
        "LABEL_W48",
    )?;
    let label_w72 = parse_opt_bool(
        fields
            .next()
            .ok_or_else(|| parse_err(loc, "missing LABEL_W72"))?,
        loc,
        "LABEL_W72",
    )?;

    Ok(PatientRecord {
        patient_id,
        enrollment_date,
        static_features: statics,
        channels: Vec::new(),
        label_w48,
        label_w72,
    })
}

fn parse_sample_row(
    record: &csv::StringRecord,
    loc: &str,
    index: &BTreeMap<String, usize>,
    patients: &mut [PatientRecord],
) -> Result<(), CohortError> {
    if record.len() != 4 {
        return Err(parse_err(loc, "expected patient_id,channel_id,day,value"));
    }
    let patient_id = &record[0];
    let channel_id = ChannelId::from_str(&record[1]).map_err(|e| parse_err(loc, e))?;
    let day: u32 = record[2]
        .parse()
        .map_err(|e| parse_err(loc, format!("day: {e}")))?;
    if day > crate::MAX_DAY {
        return Err(parse_err(
            loc,
            format!("day {day} outside [0, {}]", crate::MAX_DAY),
        ));
    }
    let value: f64 = record[3]
        .parse()
        .map_err(|e| parse_err(loc, format!("value: {e}")))?;

    let &idx = index
        .get(patient_id)
        .ok_or_else(|| parse_err(loc, format!("unknown patient_id '{patient_id}'")))?;
    let patient = &mut patients[idx];
    match patient
        .channels
        .iter_mut()
        .find(|c| c.channel_id == channel_id)
    {
        Some(ch) => {
            if ch.samples.iter().any(|&(d, _)| d == day) {
                return Err(parse_err(
                    loc,
                    format!(
                        "duplicate sample for {} {} day {day}",
                        patient_id,
                        channel_id.as_str()
                    ),
                ));
            }
            ch.samples.push((day, value));
        }
        None => patient.channels.push(DigitalChannel {
            channel_id,
            samples: vec![(day, value)],
        }),
    }
    Ok(())
}

fn save_csv_pair(cohort: &Cohort, dir: &Path) -> Result<(), CohortError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let patients_path = dir.join("patients.csv");
    let samples_path = dir.join("samples.csv");

    let mut w = csv::Writer::from_path(&patients_path)
        .map_err(|e| parse_err(patients_path.display().to_string(), e.to_string()))?;
    w.write_record(patient_header())
        .map_err(|e| parse_err(patients_path.display().to_string(), e.to_string()))?;
    for p in &cohort.patients {
        let mut row: Vec<String> = vec![
            p.patient_id.clone(),
            p.enrollment_date.to_string(),
            p.static_features
                .sex
                .map(|s| s.as_str().to_string())
                .unwrap_or_default(),
        ];
        for col in NUMERIC_COLUMNS {
            row.push(
                (col.get)(&p.static_features)
                    .map(|v| format!("{v}"))
                    .unwrap_or_default(),
            );
        }
        for label in [p.label_w48, p.label_w72] {
            row.push(match label {
                None => String::new(),
                Some(false) => "0".to_string(),
                Some(true) => "1".to_string(),
            });
        }
        w.write_record(&row)
            .map_err(|e| parse_err(patients_path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(&patients_path, e))?;

    let mut w = csv::Writer::from_path(&samples_path)
        .map_err(|e| parse_err(samples_path.display().to_string(), e.to_string()))?;
    w.write_record(["patient_id", "channel_id", "day", "value"])
        .map_err(|e| parse_err(samples_path.display().to_string(), e.to_string()))?;
    for p in &cohort.patients {
        for ch in &p.channels {
            for &(day, value) in &ch.samples {
                w.write_record([
                    p.patient_id.as_str(),
                    ch.channel_id.as_str(),
                    &day.to_string(),
                    &format!("{value}"),
                ])
                .map_err(|e| parse_err(samples_path.display().to_string(), e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(&samples_path, e))?;
    Ok(())
}
