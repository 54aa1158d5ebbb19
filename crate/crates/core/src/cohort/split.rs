//! Temporal train/test splitting by enrollment-date cutoff.

use chrono::NaiveDate;

use super::Cohort;

/// Partitions by enrollment date: strictly before the cutoff goes to
/// train, on or after goes to test. A degenerate (empty) side is
/// reported as a warning, not an error.
pub fn temporal_split(cohort: &Cohort, cutoff: NaiveDate) -> (Cohort, Cohort) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for p in &cohort.patients {
        if p.enrollment_date < cutoff {
            train.push(p.clone());
        } else {
            test.push(p.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        log::warn!(
            "degenerate temporal split at {cutoff}: train={} test={}",
            train.len(),
            test.len()
        );
    }
    (
        Cohort::new(train, format!("{}#train<{cutoff}", cohort.provenance)),
        Cohort::new(test, format!("{}#test>={cutoff}", cohort.provenance)),
    )
}

/// Empirical percentile of enrollment dates, usable as a cutoff giving
/// approximately a `frac` / (1 - `frac`) split.
pub fn date_percentile(cohort: &Cohort, frac: f64) -> Option<NaiveDate> {
    if cohort.is_empty() {
        return None;
    }
    let mut dates: Vec<NaiveDate> = cohort.patients.iter().map(|p| p.enrollment_date).collect();
    dates.sort();
    let idx = ((dates.len() as f64 * frac).ceil() as usize).min(dates.len() - 1);
    Some(dates[idx])
}
