//! Cohort data model: patient records combining static clinical features
//! with irregular per-channel digital time series, plus ingestion,
//! filtering, temporal splitting, and static-feature encoding.

mod encode;
mod filter;
mod io;
mod split;

pub use encode::{encode_static, fit_static_encoder, EncodedColumn, EncoderState, EncodingSpec};
pub use filter::{filter_cohort, ChannelDensityRule, FilterConfig, FilterReport};
pub use io::{load_cohort, save_cohort, CohortFormat};
pub use split::{date_percentile, temporal_split};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::MAX_DAY;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{} rows failed to parse, first: {}", errors.len(), errors[0])]
    ParseErrors { errors: Vec<CohortError> },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty training cohort")]
    EmptyTrain,
}

/// Binary progression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    W48,
    W72,
}

impl Target {
    pub fn label_of(&self, record: &PatientRecord) -> Option<bool> {
        match self {
            Target::W48 => record.label_w48,
            Target::W72 => record.label_w72,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Target::W48 => "w48",
            Target::W72 => "w72",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "w48" => Ok(Target::W48),
            "w72" => Ok(Target::W72),
            other => Err(format!("unknown target '{other}', expected w48 or w72")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
        }
    }
}

/// Functional system scores, EDSS subscales plus ambulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalSystem {
    Pyramidal,
    Cerebellar,
    Brainstem,
    Sensory,
    BowelBladder,
    Visual,
    Cerebral,
    Ambulation,
}

impl FunctionalSystem {
    pub const ALL: [FunctionalSystem; 8] = [
        FunctionalSystem::Pyramidal,
        FunctionalSystem::Cerebellar,
        FunctionalSystem::Brainstem,
        FunctionalSystem::Sensory,
        FunctionalSystem::BowelBladder,
        FunctionalSystem::Visual,
        FunctionalSystem::Cerebral,
        FunctionalSystem::Ambulation,
    ];
}

/// MRI-derived volumes in mm³.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrainRegion {
    CerebellarWm,
    CerebralWm,
    T2Lesion,
    Thalamic,
}

impl BrainRegion {
    pub const ALL: [BrainRegion; 4] = [
        BrainRegion::CerebellarWm,
        BrainRegion::CerebralWm,
        BrainRegion::T2Lesion,
        BrainRegion::Thalamic,
    ];
}

/// Baseline clinical features. Any field may be missing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub age: Option<f64>,
    pub bmi: Option<f64>,
    pub sex: Option<Sex>,
    pub edss: Option<f64>,
    /// Indexed by `FunctionalSystem::ALL` order.
    pub functional_scores: [Option<u32>; 8],
    pub t25fwt: Option<f64>,
    pub nhpt_avg: Option<f64>,
    pub nhpt_min: Option<f64>,
    pub nhpt_max: Option<f64>,
    pub nhpt_range: Option<f64>,
    pub sdmt: Option<f64>,
    pub num_relapses: Option<u32>,
    pub onset_years: Option<f64>,
    /// Indexed by `BrainRegion::ALL` order.
    pub brain_volumes: [Option<f64>; 4],
}

impl StaticFeatures {
    pub fn functional_score(&self, fs: FunctionalSystem) -> Option<u32> {
        self.functional_scores[fs as usize]
    }

    pub fn brain_volume(&self, region: BrainRegion) -> Option<f64> {
        self.brain_volumes[region as usize]
    }

    /// Checks field-level invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(edss) = self.edss {
            let doubled = edss * 2.0;
            if !(0.0..=10.0).contains(&edss) || (doubled - doubled.round()).abs() > 1e-9 {
                return Err(format!("EDSS {edss} not a multiple of 0.5 in [0, 10]"));
            }
        }
        if let (Some(min), Some(max), Some(range)) = (self.nhpt_min, self.nhpt_max, self.nhpt_range)
        {
            if ((max - min) - range).abs() > 1e-6 {
                return Err(format!(
                    "NHPT range {range} inconsistent with max-min = {}",
                    max - min
                ));
            }
        }
        Ok(())
    }
}

/// Daily digital test channels collected over the 12-week window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    StepDurationMed,
    StepImpulseMed,
    StepLengthMed,
    StepLengthSum,
    StepVelocityMed,
    TurnSpeedMed,
    DasFig8Accuracy,
    PinchAsync,
    PinchCount,
}

impl ChannelId {
    pub const ALL: [ChannelId; 9] = [
        ChannelId::StepDurationMed,
        ChannelId::StepImpulseMed,
        ChannelId::StepLengthMed,
        ChannelId::StepLengthSum,
        ChannelId::StepVelocityMed,
        ChannelId::TurnSpeedMed,
        ChannelId::DasFig8Accuracy,
        ChannelId::PinchAsync,
        ChannelId::PinchCount,
    ];

    pub const GAIT: [ChannelId; 6] = [
        ChannelId::StepDurationMed,
        ChannelId::StepImpulseMed,
        ChannelId::StepLengthMed,
        ChannelId::StepLengthSum,
        ChannelId::StepVelocityMed,
        ChannelId::TurnSpeedMed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelId::StepDurationMed => "step_duration_med",
            ChannelId::StepImpulseMed => "step_impulse_med",
            ChannelId::StepLengthMed => "step_length_med",
            ChannelId::StepLengthSum => "step_length_sum",
            ChannelId::StepVelocityMed => "step_velocity_med",
            ChannelId::TurnSpeedMed => "turn_speed_med",
            ChannelId::DasFig8Accuracy => "das_fig8_accuracy",
            ChannelId::PinchAsync => "pinch_async",
            ChannelId::PinchCount => "pinch_count",
        }
    }
}

impl std::str::FromStr for ChannelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelId::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown channel id '{s}'"))
    }
}

/// One digital channel: ordered (day, value) samples with at most one
/// sample per day, days in [0, 84].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalChannel {
    pub channel_id: ChannelId,
    pub samples: Vec<(u32, f64)>,
}

impl DigitalChannel {
    pub fn new(channel_id: ChannelId, samples: Vec<(u32, f64)>) -> Result<Self, String> {
        let ch = DigitalChannel {
            channel_id,
            samples,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut prev: Option<u32> = None;
        for &(day, value) in &self.samples {
            if day > MAX_DAY {
                return Err(format!(
                    "channel {}: day {day} outside [0, {MAX_DAY}]",
                    self.channel_id.as_str()
                ));
            }
            if !value.is_finite() {
                return Err(format!(
                    "channel {}: non-finite value at day {day}",
                    self.channel_id.as_str()
                ));
            }
            if let Some(p) = prev {
                if day <= p {
                    return Err(format!(
                        "channel {}: days not strictly increasing at day {day}",
                        self.channel_id.as_str()
                    ));
                }
            }
            prev = Some(day);
        }
        Ok(())
    }

    pub fn days(&self) -> Vec<f64> {
        self.samples.iter().map(|&(d, _)| d as f64).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|&(_, v)| v).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub enrollment_date: NaiveDate,
    #[serde(rename = "static")]
    pub static_features: StaticFeatures,
    pub channels: Vec<DigitalChannel>,
    pub label_w48: Option<bool>,
    pub label_w72: Option<bool>,
}

impl PatientRecord {
    pub fn channel(&self, id: ChannelId) -> Option<&DigitalChannel> {
        self.channels.iter().find(|c| c.channel_id == id)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.static_features.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for ch in &self.channels {
            ch.validate()?;
            if !seen.insert(ch.channel_id) {
                return Err(format!(
                    "duplicate channel {} in patient {}",
                    ch.channel_id.as_str(),
                    self.patient_id
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub provenance: String,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>, provenance: impl Into<String>) -> Self {
        Cohort {
            patients,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Validates every record plus cohort-level uniqueness of patient ids.
    pub fn validate(&self) -> Result<(), CohortError> {
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.patients {
            p.validate().map_err(CohortError::Schema)?;
            if !ids.insert(p.patient_id.as_str()) {
                return Err(CohortError::Schema(format!(
                    "duplicate patient_id '{}'",
                    p.patient_id
                )));
            }
        }
        Ok(())
    }
}

/// Accessors for the numeric static columns, in canonical on-disk order.
pub struct NumericColumn {
    pub name: &'static str,
    pub get: fn(&StaticFeatures) -> Option<f64>,
    pub set: fn(&mut StaticFeatures, f64),
}

macro_rules! num_col {
    ($name:literal, $field:ident) => {
        NumericColumn {
            name: $name,
            get: |s| s.$field,
            set: |s, v| s.$field = Some(v),
        }
    };
}

macro_rules! fs_col {
    ($name:literal, $idx:expr) => {
        NumericColumn {
            name: $name,
            get: |s| s.functional_scores[$idx].map(|v| v as f64),
            set: |s, v| s.functional_scores[$idx] = Some(v.round().max(0.0) as u32),
        }
    };
}

macro_rules! vol_col {
    ($name:literal, $idx:expr) => {
        NumericColumn {
            name: $name,
            get: |s| s.brain_volumes[$idx],
            set: |s, v| s.brain_volumes[$idx] = Some(v),
        }
    };
}

/// Canonical numeric static columns, named after the dataset's feature table.
pub const NUMERIC_COLUMNS: &[NumericColumn] = &[
    num_col!("AGE", age),
    num_col!("BBMI", bmi),
    num_col!("EDSS", edss),
    fs_col!("FS_PYRAMIDAL", 0),
    fs_col!("FS_CEREBELLAR", 1),
    fs_col!("FS_BRAINSTEM", 2),
    fs_col!("FS_SENSORY", 3),
    fs_col!("FS_BOWEL_BLADDER", 4),
    fs_col!("FS_VISUAL", 5),
    fs_col!("FS_CEREBRAL", 6),
    fs_col!("FS_AMBULATION", 7),
    num_col!("T25FWT", t25fwt),
    num_col!("NHPT_AVG", nhpt_avg),
    num_col!("NHPT_MIN", nhpt_min),
    num_col!("NHPT_MAX", nhpt_max),
    num_col!("NHPT_RANGE", nhpt_range),
    num_col!("BLSDMT", sdmt),
    NumericColumn {
        name: "NUMRLP",
        get: |s| s.num_relapses.map(|v| v as f64),
        set: |s, v| s.num_relapses = Some(v.round().max(0.0) as u32),
    },
    num_col!("ONSETYRS", onset_years),
    vol_col!("VOL_CEREBELLAR_WM", 0),
    vol_col!("VOL_CEREBRAL_WM", 1),
    vol_col!("VOL_T2_LESION", 2),
    vol_col!("VOL_THALAMIC", 3),
];

pub fn numeric_column(name: &str) -> Option<&'static NumericColumn> {
    NUMERIC_COLUMNS.iter().find(|c| c.name == name)
}
