//! Deterministic synthetic cohort generator with a tunable planted
//! progression signal, so every pipeline is runnable without real data.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{
    ChannelId, Cohort, DigitalChannel, PatientRecord, Sex, StaticFeatures,
};
use crate::config::derive_seed;
use crate::gp::{cholesky_with_jitter, kernel_matrix, GpHyperparams};
use crate::WINDOW_DAYS;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SignalStrength {
    #[default]
    None,
    Weak,
    Strong,
}

impl SignalStrength {
    /// Overall signal magnitude. The weak/strong values were calibrated
    /// once against the logistic baseline (targeting test AUROC near
    /// 0.65 and 0.85 on default-size cohorts) and are frozen here.
    pub fn scale(self) -> f64 {
        match self {
            SignalStrength::None => 0.0,
            SignalStrength::Weak => 0.45,
            SignalStrength::Strong => 1.8,
        }
    }
}

impl std::str::FromStr for SignalStrength {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(SignalStrength::None),
            "weak" => Ok(SignalStrength::Weak),
            "strong" => Ok(SignalStrength::Strong),
            other => Err(format!("unknown signal strength {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_patients: usize,
    pub event_rate_w48: f64,
    pub event_rate_w72: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub edss_mean: f64,
    pub edss_sd: f64,
    pub female_frac: f64,
    /// Per-day observation probability for each channel.
    pub missingness: f64,
    pub signal_strength: SignalStrength,
    /// Fraction of the planted signal carried by static features; the
    /// remainder goes into channel drifts.
    pub signal_split: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_patients: 415,
            event_rate_w48: 0.24,
            event_rate_w72: 0.35,
            age_mean: 48.8,
            age_sd: 9.3,
            edss_mean: 4.8,
            edss_sd: 1.4,
            female_frac: 0.535,
            missingness: 0.5,
            signal_strength: SignalStrength::None,
            signal_split: 0.5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_patients < 10 {
            return Err(SynthError::Config(format!(
                "n_patients {} < 10",
                self.n_patients
            )));
        }
        for (name, p) in [
            ("event_rate_w48", self.event_rate_w48),
            ("event_rate_w72", self.event_rate_w72),
            ("female_frac", self.female_frac),
            ("missingness", self.missingness),
            ("signal_split", self.signal_split),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.age_sd <= 0.0 || self.edss_sd <= 0.0 {
            return Err(SynthError::Config("standard deviations must be > 0".into()));
        }
        Ok(())
    }
}

/// Realized marginals of a generated cohort, written alongside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimManifest {
    pub config: SimConfig,
    pub n_patients: usize,
    pub event_rate_w48: f64,
    pub event_rate_w72: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub edss_mean: f64,
    pub edss_sd: f64,
    pub female_frac: f64,
    pub mean_samples_per_channel: f64,
}

/// Per-channel generation parameters: (baseline, latent amplitude,
/// observation noise sd, drift direction for progressors).
fn channel_params(id: ChannelId) -> (f64, f64, f64, f64) {
    match id {
        ChannelId::StepDurationMed => (1.10, 0.08, 0.03, 1.0),
        ChannelId::StepImpulseMed => (0.35, 0.04, 0.015, 0.0),
        ChannelId::StepLengthMed => (0.60, 0.05, 0.02, 0.0),
        ChannelId::StepLengthSum => (900.0, 90.0, 40.0, 0.0),
        ChannelId::StepVelocityMed => (1.00, 0.10, 0.04, -1.0),
        ChannelId::TurnSpeedMed => (1.50, 0.20, 0.08, 0.0),
        ChannelId::DasFig8Accuracy => (0.80, 0.06, 0.03, 0.0),
        ChannelId::PinchAsync => (0.12, 0.02, 0.01, 0.0),
        ChannelId::PinchCount => (45.0, 6.0, 3.0, 0.0),
    }
}

/// Steepness of the latent-risk to label-probability link.
const LABEL_SLOPE: f64 = 2.5;
/// Latent trajectory smoothness in days.
const LATENT_LENGTH_SCALE: f64 = 10.0;
/// Drift over the full 84-day window, in latent-amplitude units, at
/// unit risk and unit digital signal scale.
const DRIFT_AMPLITUDES: f64 = 2.0;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Solves for the intercept a such that E[sigmoid(a + slope * r)] over
/// r ~ N(0,1) equals `rate`, by bisection on a deterministic grid.
fn label_intercept(rate: f64, slope: f64) -> f64 {
    let grid: Vec<(f64, f64)> = (0..=1600)
        .map(|i| {
            let r = -8.0 + i as f64 * 0.01;
            let w = (-0.5 * r * r).exp();
            (r, w)
        })
        .collect();
    let wsum: f64 = grid.iter().map(|(_, w)| w).sum();
    let mean_prob = |a: f64| -> f64 {
        grid.iter().map(|(r, w)| w * sigmoid(a + slope * r)).sum::<f64>() / wsum
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn round_edss(x: f64) -> f64 {
    ((x * 2.0).round() / 2.0).clamp(0.0, 10.0)
}

struct LatentPrior {
    chol: DMatrix<f64>,
}

impl LatentPrior {
    fn new() -> Self {
        let times: Vec<f64> = (0..WINDOW_DAYS).map(|d| d as f64).collect();
        let theta = GpHyperparams {
            sigma_c2: 1.0,
            length_scale: LATENT_LENGTH_SCALE,
            sigma_n2: 1e-6,
        };
        let k = kernel_matrix(&times, &theta);
        let (chol, _) = cholesky_with_jitter(&k).expect("latent prior kernel is PD");
        LatentPrior { chol }
    }

    /// One smooth unit-amplitude trajectory over days 0..=84.
    fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(WINDOW_DAYS, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * z
    }
}

fn generate_patient(
    config: &SimConfig,
    prior: &LatentPrior,
    index: usize,
    a48: f64,
    a72: f64,
) -> PatientRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &["patient", &index.to_string()],
    ));
    let scale = config.signal_strength.scale();
    let s_static = scale * config.signal_split;
    let s_digital = scale * (1.0 - config.signal_split);

    let risk: f64 = rng.sample(StandardNormal);
    let label_w48 = rng.gen_bool(sigmoid(a48 + LABEL_SLOPE * risk).clamp(0.0, 1.0));
    let label_w72 = rng.gen_bool(sigmoid(a72 + LABEL_SLOPE * risk).clamp(0.0, 1.0));

    let noise = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    let age = (config.age_mean + config.age_sd * noise(&mut rng)).clamp(18.0, 80.0);
    let sex = if rng.gen_bool(config.female_frac) {
        Sex::F
    } else {
        Sex::M
    };
    let bmi = (26.0 + 4.0 * noise(&mut rng)).clamp(15.0, 45.0);
    let edss = round_edss(config.edss_mean + config.edss_sd * noise(&mut rng) + 0.8 * s_static * risk);
    let mut functional_scores = [None; 8];
    for slot in functional_scores.iter_mut() {
        let raw = 1.5 + 1.2 * noise(&mut rng) + 0.4 * s_static * risk;
        *slot = Some(raw.round().clamp(0.0, 6.0) as u32);
    }
    let t25fwt = (7.0 + 2.5 * noise(&mut rng) + 1.5 * s_static * risk).max(2.0);
    let nhpt_min = (20.0 + 4.0 * noise(&mut rng)).max(10.0);
    let nhpt_max = nhpt_min + (2.0 + noise(&mut rng)).abs();
    let sdmt = (50.0 + 10.0 * noise(&mut rng) - 4.0 * s_static * risk).clamp(0.0, 110.0);
    let relapse_rate = (0.8 + 0.5 * s_static * risk).max(1e-6);
    let num_relapses = Poisson::new(relapse_rate)
        .expect("positive rate")
        .sample(&mut rng)
        .min(20.0) as u32;
    let onset_years = (10.0 + 6.0 * noise(&mut rng)).abs().min(40.0);
    let mut brain_volumes = [None; 4];
    let region_stats = [(85.0, 8.0), (420.0, 35.0), (12.0, 6.0), (15.0, 1.5)];
    for (slot, (mean, sd)) in brain_volumes.iter_mut().zip(region_stats) {
        *slot = Some((mean + sd * noise(&mut rng)).max(0.1));
    }
    // Lesion volume carries a touch of the static signal.
    if let Some(v) = brain_volumes[2].as_mut() {
        *v = (*v + 2.0 * s_static * risk).max(0.1);
    }

    let static_features = StaticFeatures {
        age: Some(age),
        bmi: Some(bmi),
        sex: Some(sex),
        edss: Some(edss),
        functional_scores,
        t25fwt: Some(t25fwt),
        nhpt_avg: Some(0.5 * (nhpt_min + nhpt_max)),
        nhpt_min: Some(nhpt_min),
        nhpt_max: Some(nhpt_max),
        nhpt_range: Some(nhpt_max - nhpt_min),
        sdmt: Some(sdmt),
        num_relapses: Some(num_relapses),
        onset_years: Some(onset_years),
        brain_volumes,
    };

    let enrollment_date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap()
        + chrono::Days::new(rng.gen_range(0..720));

    let mut channels = Vec::with_capacity(ChannelId::ALL.len());
    for id in ChannelId::ALL {
        let (baseline, amp, noise_sd, drift_dir) = channel_params(id);
        let latent = prior.draw(&mut rng);
        let drift_per_day = drift_dir * DRIFT_AMPLITUDES * amp * s_digital * risk / 84.0;
        let mut samples = Vec::new();
        for day in 0..WINDOW_DAYS as u32 {
            let observed = rng.gen_bool(config.missingness);
            let eps: f64 = rng.sample(StandardNormal);
            if observed {
                let value = baseline
                    + amp * latent[day as usize]
                    + drift_per_day * day as f64
                    + noise_sd * eps;
                samples.push((day, value));
            }
        }
        if samples.is_empty() {
            continue;
        }
        channels.push(DigitalChannel::new(id, samples).expect("generated samples are valid"));
    }

    PatientRecord {
        patient_id: format!("SYN{index:05}"),
        enrollment_date,
        static_features,
        channels,
        label_w48: Some(label_w48),
        label_w72: Some(label_w72),
    }
}

/// Generates a cohort and its realized-marginal manifest. Bitwise
/// deterministic in `config` (patients use derived per-index seeds, so
/// parallel generation does not affect the result).
pub fn generate(config: &SimConfig) -> Result<(Cohort, SimManifest), SynthError> {
    config.validate()?;
    let prior = LatentPrior::new();
    let a48 = label_intercept(config.event_rate_w48, LABEL_SLOPE);
    let a72 = label_intercept(config.event_rate_w72, LABEL_SLOPE);

    let patients: Vec<PatientRecord> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(config, &prior, i, a48, a72))
        .collect();

    let n = patients.len() as f64;
    let mean = |f: &dyn Fn(&PatientRecord) -> f64| patients.iter().map(|p| f(p)).sum::<f64>() / n;
    let age_mean = mean(&|p| p.static_features.age.unwrap_or(0.0));
    let age_sd = (patients
        .iter()
        .map(|p| (p.static_features.age.unwrap_or(0.0) - age_mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let edss_mean = mean(&|p| p.static_features.edss.unwrap_or(0.0));
    let edss_sd = (patients
        .iter()
        .map(|p| (p.static_features.edss.unwrap_or(0.0) - edss_mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let manifest = SimManifest {
        config: config.clone(),
        n_patients: patients.len(),
        event_rate_w48: mean(&|p| if p.label_w48 == Some(true) { 1.0 } else { 0.0 }),
        event_rate_w72: mean(&|p| if p.label_w72 == Some(true) { 1.0 } else { 0.0 }),
        age_mean,
        age_sd,
        edss_mean,
        edss_sd,
        female_frac: mean(&|p| if p.static_features.sex == Some(Sex::F) { 1.0 } else { 0.0 }),
        mean_samples_per_channel: patients
            .iter()
            .flat_map(|p| p.channels.iter())
            .map(|c| c.samples.len() as f64)
            .sum::<f64>()
            / patients.iter().map(|p| p.channels.len() as f64).sum::<f64>().max(1.0),
    };

    let cohort = Cohort::new(patients, format!("synthetic seed={}", config.seed));
    cohort
        .validate()
        .map_err(|e| SynthError::Config(format!("generated cohort failed validation: {e}")))?;
    Ok((cohort, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_bitwise_identical() {
        let config = SimConfig {
            n_patients: 25,
            ..SimConfig::default()
        };
        let (a, _) = generate(&config).unwrap();
        let (b, _) = generate(&config).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn different_seed_differs() {
        let base = SimConfig {
            n_patients: 25,
            ..SimConfig::default()
        };
        let other = SimConfig { seed: 1, ..base.clone() };
        let (a, _) = generate(&base).unwrap();
        let (b, _) = generate(&other).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn default_marginals_near_targets() {
        let (_, manifest) = generate(&SimConfig::default()).unwrap();
        assert!((manifest.age_mean - 48.8).abs() < 1.5, "age mean {}", manifest.age_mean);
        assert!(
            (manifest.event_rate_w48 - 0.24).abs() < 0.07,
            "w48 rate {}",
            manifest.event_rate_w48
        );
        assert!(
            (manifest.event_rate_w72 - 0.35).abs() < 0.08,
            "w72 rate {}",
            manifest.event_rate_w72
        );
        assert!(
            (manifest.female_frac - 0.535).abs() < 0.10,
            "female frac {}",
            manifest.female_frac
        );
        assert!((manifest.edss_mean - 4.8).abs() < 0.3, "edss mean {}", manifest.edss_mean);
    }

    #[test]
    fn generated_records_pass_validation() {
        let config = SimConfig {
            n_patients: 40,
            signal_strength: SignalStrength::Strong,
            seed: 3,
            ..SimConfig::default()
        };
        let (cohort, _) = generate(&config).unwrap();
        cohort.validate().unwrap();
        for p in &cohort.patients {
            assert!(p.label_w48.is_some() && p.label_w72.is_some());
            assert!(!p.channels.is_empty());
        }
    }

    #[test]
    fn missingness_controls_sample_density() {
        let sparse = SimConfig {
            n_patients: 30,
            missingness: 0.2,
            ..SimConfig::default()
        };
        let dense = SimConfig {
            n_patients: 30,
            missingness: 0.9,
            ..SimConfig::default()
        };
        let (_, ms) = generate(&sparse).unwrap();
        let (_, md) = generate(&dense).unwrap();
        assert!(ms.mean_samples_per_channel < 0.35 * WINDOW_DAYS as f64);
        assert!(md.mean_samples_per_channel > 0.75 * WINDOW_DAYS as f64);
    }

    #[test]
    fn label_intercept_hits_target_rate() {
        for rate in [0.1, 0.24, 0.35, 0.5] {
            let a = label_intercept(rate, LABEL_SLOPE);
            // Monte Carlo check of the marginal event rate.
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 200_000;
            let mut hits = 0usize;
            for _ in 0..n {
                let r: f64 = rng.sample(StandardNormal);
                if rng.gen_bool(sigmoid(a + LABEL_SLOPE * r).clamp(0.0, 1.0)) {
                    hits += 1;
                }
            }
            let realized = hits as f64 / n as f64;
            assert!((realized - rate).abs() < 0.01, "rate {rate} realized {realized}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_n = SimConfig { n_patients: 5, ..SimConfig::default() };
        assert!(generate(&bad_n).is_err());
        let bad_rate = SimConfig { event_rate_w48: 1.5, ..SimConfig::default() };
        assert!(generate(&bad_rate).is_err());
    }

    #[test]
    fn signal_none_static_features_independent_of_label() {
        // With no signal, mean EDSS of progressors and non-progressors
        // must be close (both pure draws from the same marginal).
        let config = SimConfig {
            n_patients: 400,
            signal_strength: SignalStrength::None,
            seed: 5,
            ..SimConfig::default()
        };
        let (cohort, _) = generate(&config).unwrap();
        let groups: Vec<Vec<f64>> = [true, false]
            .iter()
            .map(|&lab| {
                cohort
                    .patients
                    .iter()
                    .filter(|p| p.label_w48 == Some(lab))
                    .filter_map(|p| p.static_features.edss)
                    .collect()
            })
            .collect();
        let m: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect();
        assert!((m[0] - m[1]).abs() < 0.5, "group means {m:?}");
    }

    #[test]
    fn strong_signal_shifts_static_features_by_label() {
        let config = SimConfig {
            n_patients: 400,
            signal_strength: SignalStrength::Strong,
            signal_split: 1.0,
            seed: 5,
            ..SimConfig::default()
        };
        let (cohort, _) = generate(&config).unwrap();
        let mean_edss = |lab: bool| {
            let vals: Vec<f64> = cohort
                .patients
                .iter()
                .filter(|p| p.label_w48 == Some(lab))
                .filter_map(|p| p.static_features.edss)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(
            mean_edss(true) > mean_edss(false) + 0.3,
            "progressor EDSS {} vs {}",
            mean_edss(true),
            mean_edss(false)
        );
    }
}
