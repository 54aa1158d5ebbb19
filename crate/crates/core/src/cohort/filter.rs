//! Cohort filtering with a per-rule exclusion funnel report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{numeric_column, ChannelId, Cohort, Target};

/// Requires a minimum number of samples within the input window, in at
/// least one (or every) listed channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDensityRule {
    pub channels: Vec<ChannelId>,
    pub min_samples: usize,
    /// When true, every listed channel must meet the minimum; otherwise
    /// one suffices.
    #[serde(default)]
    pub require_all: bool,
}

impl ChannelDensityRule {
    fn name(&self) -> String {
        let mode = if self.require_all { "all" } else { "any" };
        let channels: Vec<&str> = self.channels.iter().map(|c| c.as_str()).collect();
        format!(
            "density(>= {} samples in {} of [{}])",
            self.min_samples,
            mode,
            channels.join(",")
        )
    }

    fn passes(&self, record: &super::PatientRecord) -> bool {
        let count = |id: ChannelId| {
            record
                .channel(id)
                .map(|c| c.samples.len())
                .unwrap_or(0)
        };
        if self.require_all {
            self.channels.iter().all(|&id| count(id) >= self.min_samples)
        } else {
            self.channels.iter().any(|&id| count(id) >= self.min_samples)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Static columns (by canonical name, or "SEX") that must be present.
    #[serde(default)]
    pub required_static: Vec<String>,
    #[serde(default)]
    pub density_rules: Vec<ChannelDensityRule>,
    /// Targets whose label must be present.
    #[serde(default)]
    pub required_labels: Vec<Target>,
}

impl FilterConfig {
    pub fn empty() -> Self {
        FilterConfig {
            required_static: Vec::new(),
            density_rules: Vec::new(),
            required_labels: Vec::new(),
        }
    }

    /// Baseline availability plus longitudinal density on gait channels.
    pub fn default_rules(target: Target) -> Self {
        FilterConfig {
            required_static: vec!["AGE".into(), "EDSS".into()],
            density_rules: vec![ChannelDensityRule {
                channels: ChannelId::GAIT.to_vec(),
                min_samples: 8,
                require_all: false,
            }],
            required_labels: vec![target],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub retained_count: usize,
    /// Exclusions attributed to the first failing rule, funnel-style.
    pub excluded: BTreeMap<String, usize>,
}

/// Retains patients satisfying all rules. Never fails; exclusions are
/// counted per rule in the report.
pub fn filter_cohort(cohort: &Cohort, rules: &FilterConfig) -> (Cohort, FilterReport) {
    let mut excluded: BTreeMap<String, usize> = BTreeMap::new();
    let mut retained = Vec::new();

    'patient: for p in &cohort.patients {
        for name in &rules.required_static {
            let present = if name == "SEX" {
                p.static_features.sex.is_some()
            } else {
                numeric_column(name)
                    .map(|c| (c.get)(&p.static_features).is_some())
                    .unwrap_or(false)
            };
            if !present {
                *excluded.entry(format!("missing_static({name})")).or_insert(0) += 1;
                continue 'patient;
            }
        }
        for rule in &rules.density_rules {
            if !rule.passes(p) {
                *excluded.entry(rule.name()).or_insert(0) += 1;
                continue 'patient;
            }
        }
        for target in &rules.required_labels {
            if target.label_of(p).is_none() {
                *excluded
                    .entry(format!("missing_label({})", target.as_str()))
                    .or_insert(0) += 1;
                continue 'patient;
            }
        }
        retained.push(p.clone());
    }

    let report = FilterReport {
        input_count: cohort.len(),
        retained_count: retained.len(),
        excluded,
    };
    (Cohort::new(retained, cohort.provenance.clone()), report)
}
