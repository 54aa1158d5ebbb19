//! Per-(patient, channel) fitting with train-set standardization,
//! trajectory completion in original units, and synthetic augmentation.

use serde::{Deserialize, Serialize};

use super::{fit_gp, heuristic_init, FitOptions, GpBounds, GpError, GpFit};
use crate::cohort::{ChannelId, DigitalChannel, PatientRecord};
use crate::config::derive_seed;

/// A GP fitted to one channel's standardized values, together with the
/// standardization used so queries return original units.
#[derive(Debug, Clone)]
pub struct ChannelGp {
    pub channel_id: ChannelId,
    pub fit: GpFit,
    pub bounds: GpBounds,
    /// (mean, std) applied to values before fitting.
    pub norm: (f64, f64),
}

/// Persisted form of a fitted channel GP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelGpRecord {
    pub patient_id: String,
    pub channel_id: ChannelId,
    pub theta: super::GpHyperparams,
    pub bounds: GpBounds,
    pub lml: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ChannelGp {
    pub fn to_record(&self, patient_id: &str) -> ChannelGpRecord {
        ChannelGpRecord {
            patient_id: patient_id.to_string(),
            channel_id: self.channel_id,
            theta: self.fit.theta,
            bounds: self.bounds,
            lml: self.fit.lml,
            norm_mean: self.norm.0,
            norm_std: self.norm.1,
            times: self.fit.times.clone(),
            values: self.fit.values.clone(),
        }
    }
}

/// Fits a GP to a single channel. `norm` is the train-set (mean, std)
/// for this channel; values are standardized before fitting so the
/// zero-mean prior holds.
pub fn fit_channel(
    channel: &DigitalChannel,
    norm: (f64, f64),
    options: &FitOptions,
    seed: u64,
) -> Result<ChannelGp, GpError> {
    let (mean, std) = norm;
    let std = if std > 0.0 { std } else { 1.0 };
    let times = channel.days();
    let values: Vec<f64> = channel.samples.iter().map(|&(_, v)| (v - mean) / std).collect();
    let bounds = heuristic_init(&times, &values)?;
    let fit = fit_gp(&times, &values, &bounds, options, seed)?;
    Ok(ChannelGp {
        channel_id: channel.channel_id,
        fit,
        bounds,
        norm: (mean, std),
    })
}

/// Dense 85-day trajectory in original units. Observed days carry the
/// original values bitwise; missing days are one joint posterior draw,
/// de-standardized.
pub fn complete_channel(
    channel: &DigitalChannel,
    gp: &ChannelGp,
    seed: u64,
) -> Result<Vec<f64>, GpError> {
    let grid: Vec<f64> = (0..crate::WINDOW_DAYS).map(|d| d as f64).collect();
    let sampled = super::sample_trajectory(&gp.fit, &grid, seed)?;
    let (mean, std) = gp.norm;
    let mut out: Vec<f64> = sampled.iter().map(|v| v * std + mean).collect();
    for &(day, value) in &channel.samples {
        out[day as usize] = value;
    }
    Ok(out)
}

/// Fully synthetic 85-day trajectory (nothing preserved), original units.
pub fn synthetic_channel(gp: &ChannelGp, seed: u64) -> Result<Vec<f64>, GpError> {
    let grid: Vec<f64> = (0..crate::WINDOW_DAYS).map(|d| d as f64).collect();
    let sampled = super::sample_trajectory(&gp.fit, &grid, seed)?;
    let (mean, std) = gp.norm;
    Ok(sampled.iter().map(|v| v * std + mean).collect())
}

/// Synthetic clones of a patient: static features and labels copied,
/// every fitted channel replaced by a fully sampled trajectory. Channels
/// without a fit are copied through unchanged.
pub fn augment_patient(
    record: &PatientRecord,
    fits: &[ChannelGp],
    n_synthetic: usize,
    seed: u64,
) -> Vec<PatientRecord> {
    let mut clones = Vec::with_capacity(n_synthetic);
    for k in 1..=n_synthetic {
        let mut clone = record.clone();
        clone.patient_id = format!("{}~aug{k}", record.patient_id);
        for ch in &mut clone.channels {
            match fits.iter().find(|g| g.channel_id == ch.channel_id) {
                Some(gp) => {
                    let ch_seed = derive_seed(
                        seed,
                        &[&record.patient_id, ch.channel_id.as_str(), &format!("aug{k}")],
                    );
                    match synthetic_channel(gp, ch_seed) {
                        Ok(values) => {
                            ch.samples = values
                                .into_iter()
                                .enumerate()
                                .map(|(day, v)| (day as u32, v))
                                .collect();
                        }
                        Err(e) => {
                            log::warn!(
                                "augmentation sample failed for {} {}: {e}; copying observed",
                                record.patient_id,
                                ch.channel_id.as_str()
                            );
                        }
                    }
                }
                None => {
                    log::warn!(
                        "no fit for {} {}; channel copied unchanged",
                        record.patient_id,
                        ch.channel_id.as_str()
                    );
                }
            }
        }
        clones.push(clone);
    }
    clones
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{DigitalChannel, StaticFeatures};
    use chrono::NaiveDate;

    fn channel(samples: Vec<(u32, f64)>) -> DigitalChannel {
        DigitalChannel::new(ChannelId::StepDurationMed, samples).unwrap()
    }

    fn patient(channels: Vec<DigitalChannel>) -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            enrollment_date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
            static_features: StaticFeatures::default(),
            channels,
            label_w48: Some(true),
            label_w72: None,
        }
    }

    #[test]
    fn completion_preserves_raw_values_after_destandardization() {
        let samples: Vec<(u32, f64)> =
            (0..30).map(|i| (i * 2, 10.0 + (i as f64 / 4.0).sin())).collect();
        let ch = channel(samples.clone());
        let gp = fit_channel(&ch, (10.0, 1.0), &FitOptions::default(), 4).unwrap();
        let out = complete_channel(&ch, &gp, 1).unwrap();
        for &(day, value) in &samples {
            assert_eq!(out[day as usize].to_bits(), value.to_bits());
        }
    }

    #[test]
    fn augment_zero_returns_empty() {
        let ch = channel(vec![(0, 1.0), (5, 2.0), (9, 1.5)]);
        let gp = fit_channel(&ch, (1.5, 0.5), &FitOptions::default(), 4).unwrap();
        let p = patient(vec![ch]);
        assert!(augment_patient(&p, &[gp], 0, 7).is_empty());
    }

    #[test]
    fn augment_copies_labels_and_differs_across_clones() {
        let samples: Vec<(u32, f64)> =
            (0..25).map(|i| (i * 3, (i as f64 / 3.0).cos() * 2.0 + 5.0)).collect();
        let ch = channel(samples);
        let gp = fit_channel(&ch, (5.0, 1.4), &FitOptions::default(), 4).unwrap();
        let p = patient(vec![ch]);
        let clones = augment_patient(&p, &[gp], 3, 11);
        assert_eq!(clones.len(), 3);
        for (i, c) in clones.iter().enumerate() {
            assert_eq!(c.patient_id, format!("p1~aug{}", i + 1));
            assert_eq!(c.label_w48, p.label_w48);
            assert_eq!(c.label_w72, p.label_w72);
            assert_eq!(c.channels[0].samples.len(), crate::WINDOW_DAYS);
        }
        // Sampled trajectories must differ across clones.
        let a: Vec<f64> = clones[0].channels[0].samples.iter().map(|&(_, v)| v).collect();
        let b: Vec<f64> = clones[1].channels[0].samples.iter().map(|&(_, v)| v).collect();
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.0);
    }

    #[test]
    fn augment_without_fit_copies_channel() {
        let ch = channel(vec![(0, 1.0), (5, 2.0)]);
        let p = patient(vec![ch.clone()]);
        let clones = augment_patient(&p, &[], 1, 7);
        assert_eq!(clones[0].channels[0], ch);
    }
}
