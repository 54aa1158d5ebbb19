//! End-to-end experiment orchestration: filter, temporal split, static
//! encoding, GP imputation, feature extraction, model selection, and
//! held-out evaluation. All statistics (encoder, channel scalers,
//! feature selection, hyperparameter choice) are fit on training rows
//! only.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::cohort::{
    encode_static, filter_cohort, fit_static_encoder, temporal_split, ChannelId, Cohort,
    CohortError, EncoderState, PatientRecord, Target,
};
use crate::config::{derive_seed, ModelKind, RunConfig, SelectionConfig};
use crate::eval::{auroc, roc_points, stratified_kfold, EvalError, EvalReport};
use crate::features::{
    anova_f, rfe, windowed_features, FeatureError, FeatureTable, TableError,
};
use crate::gp::{
    augment_patient, complete_channel, fit_channel, synthetic_channel, ChannelGp,
    ChannelGpRecord, FitOptions, GpError,
};
use crate::logistic::{fit_logistic, predict_logistic, LogisticError, LogisticModel};
use crate::transformer::{
    predict as transformer_predict, train as transformer_train, Batch, Checkpoint, FusionMode,
    FusionModel, ModelError, TrainConfig,
};
use crate::WINDOW_DAYS;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cohort error: {0}")]
    Cohort(#[from] CohortError),
    #[error("GP error: {0}")]
    Gp(#[from] GpError),
    #[error("feature error: {0}")]
    Feature(#[from] FeatureError),
    #[error("feature table error: {0}")]
    Table(#[from] TableError),
    #[error("logistic error: {0}")]
    Logistic(#[from] LogisticError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("{split} split is empty after filtering")]
    EmptySplit { split: &'static str },
    #[error("{split} labels contain a single class")]
    SingleClass { split: &'static str },
    #[error("cohort is empty after filtering")]
    EmptyCohort,
}

/// Everything fitted during a run, exposed so tests can assert that no
/// statistic depends on test rows.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineArtifacts {
    pub fingerprint: String,
    pub cutoff: NaiveDate,
    pub funnel: BTreeMap<String, usize>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub encoder: EncoderState,
    /// Train-set (mean, std) per channel, keyed by channel name.
    pub channel_scalers: BTreeMap<String, (f64, f64)>,
    /// Columns surviving feature selection (logistic pipeline only).
    pub selected_columns: Option<Vec<String>>,
    /// Winning CV hyperparameter (l2 or learning rate), if a grid was searched.
    pub chosen_hyperparameter: Option<f64>,
    pub warnings: Vec<String>,
}

/// One modeled sample: completed raw-unit trajectories per channel slot
/// (`None` where the patient never wore the sensor for that channel).
struct Sample {
    id: String,
    label: bool,
    static_row: Vec<f64>,
    completed: Vec<Option<Vec<f64>>>,
}

fn channel_index(id: ChannelId) -> usize {
    ChannelId::ALL.iter().position(|&c| c == id).expect("known channel")
}

/// Train-set per-channel scalers (mean, population std). Channels with
/// no training samples get (0, 1).
fn fit_channel_scalers(train: &Cohort) -> BTreeMap<String, (f64, f64)> {
    let mut scalers = BTreeMap::new();
    for id in ChannelId::ALL {
        let values: Vec<f64> = train
            .patients
            .iter()
            .filter_map(|p| p.channel(id))
            .flat_map(|c| c.samples.iter().map(|&(_, v)| v))
            .collect();
        let stat = if values.is_empty() {
            (0.0, 1.0)
        } else {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            let std = var.sqrt();
            (mean, if std > 0.0 { std } else { 1.0 })
        };
        scalers.insert(id.as_str().to_string(), stat);
    }
    scalers
}

fn scaler_of(scalers: &BTreeMap<String, (f64, f64)>, id: ChannelId) -> (f64, f64) {
    *scalers.get(id.as_str()).unwrap_or(&(0.0, 1.0))
}

/// Fits GPs for one patient's channels and completes each trajectory on
/// the daily grid. Deterministic via per-(patient, channel) seeds.
fn complete_patient(
    record: &PatientRecord,
    scalers: &BTreeMap<String, (f64, f64)>,
    options: &FitOptions,
    seed: u64,
) -> Result<(Vec<Option<Vec<f64>>>, Vec<ChannelGp>), GpError> {
    let mut completed = vec![None; ChannelId::ALL.len()];
    let mut fits = Vec::new();
    for channel in &record.channels {
        let norm = scaler_of(scalers, channel.channel_id);
        let fit_seed = derive_seed(seed, &["gp", &record.patient_id, channel.channel_id.as_str()]);
        let gp = fit_channel(channel, norm, options, fit_seed)?;
        let sample_seed =
            derive_seed(seed, &["complete", &record.patient_id, channel.channel_id.as_str()]);
        let trajectory = complete_channel(channel, &gp, sample_seed)?;
        completed[channel_index(channel.channel_id)] = Some(trajectory);
        fits.push(gp);
    }
    Ok((completed, fits))
}

/// Windowed feature columns for every channel slot; absent channels use
/// a flat train-mean trajectory so the schema stays fixed.
fn window_columns(
    sample: &Sample,
    scalers: &BTreeMap<String, (f64, f64)>,
    window: &crate::features::WindowSpec,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for id in ChannelId::ALL {
        let (mean, _) = scaler_of(scalers, id);
        let flat;
        let traj: &[f64] = match &sample.completed[channel_index(id)] {
            Some(t) => t,
            None => {
                flat = vec![mean; WINDOW_DAYS];
                &flat
            }
        };
        out.extend(windowed_features(traj, window, id.as_str()));
    }
    out
}

fn feature_table(
    samples: &[Sample],
    statics_names: &[String],
    scalers: &BTreeMap<String, (f64, f64)>,
    window: &crate::features::WindowSpec,
) -> Result<FeatureTable, TableError> {
    let mut names: Vec<String> = statics_names.to_vec();
    let mut rows = Vec::with_capacity(samples.len());
    let mut first = true;
    for s in samples {
        let mut row = s.static_row.clone();
        for (name, value) in window_columns(s, scalers, window) {
            if first {
                names.push(name);
            }
            row.push(value);
        }
        first = false;
        rows.push(row);
    }
    FeatureTable::new(
        samples.iter().map(|s| s.id.clone()).collect(),
        names,
        rows,
    )
}

/// Standardized [T x C] tensor for the transformer; absent channels are
/// zero (the train mean after standardization).
fn sample_tensor(sample: &Sample, scalers: &BTreeMap<String, (f64, f64)>) -> DMatrix<f64> {
    let c = ChannelId::ALL.len();
    DMatrix::from_fn(WINDOW_DAYS, c, |t, ci| {
        match &sample.completed[ci] {
            Some(traj) => {
                let (mean, std) = scaler_of(scalers, ChannelId::ALL[ci]);
                (traj[t] - mean) / std
            }
            None => 0.0,
        }
    })
}

fn batch_of(samples: &[Sample], scalers: &BTreeMap<String, (f64, f64)>) -> Batch {
    let n_static = samples.first().map_or(0, |s| s.static_row.len());
    Batch {
        ts: samples.iter().map(|s| sample_tensor(s, scalers)).collect(),
        statics: DMatrix::from_fn(samples.len(), n_static, |i, j| samples[i].static_row[j]),
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

struct Prepared {
    train: Vec<Sample>,
    test: Vec<Sample>,
    static_names: Vec<String>,
    artifacts: PipelineArtifacts,
}

fn labeled_subset(cohort: &Cohort, target: Target) -> (Cohort, usize) {
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for p in &cohort.patients {
        if target.label_of(p).is_some() {
            kept.push(p.clone());
        } else {
            dropped += 1;
        }
    }
    (Cohort::new(kept, cohort.provenance.clone()), dropped)
}

fn prepare(cohort: &Cohort, config: &RunConfig) -> Result<Prepared, PipelineError> {
    let mut warnings = Vec::new();
    let (filtered, report) = filter_cohort(cohort, &config.filter);
    let mut funnel = report.excluded.clone();
    funnel.insert("input".into(), report.input_count);
    funnel.insert("retained".into(), report.retained_count);

    let (labeled, dropped) = labeled_subset(&filtered, config.target);
    if dropped > 0 {
        funnel.insert("missing_label".into(), dropped);
        warnings.push(format!("{dropped} patients dropped for missing target label"));
    }
    if labeled.is_empty() {
        return Err(PipelineError::EmptyCohort);
    }

    let cutoff = crate::cohort::date_percentile(&labeled, config.train_fraction)
        .ok_or(PipelineError::EmptyCohort)?;
    let (train, test) = temporal_split(&labeled, cutoff);
    if train.is_empty() {
        return Err(PipelineError::EmptySplit { split: "train" });
    }
    if test.is_empty() {
        return Err(PipelineError::EmptySplit { split: "test" });
    }

    // All fitted statistics below see training rows only.
    let encoder = fit_static_encoder(&train, &config.encoding)?;
    let scalers = fit_channel_scalers(&train);

    let train_statics = encode_static(&train, &encoder);
    let test_statics = encode_static(&test, &encoder);
    let static_names = train_statics.column_names.clone();

    let build = |cohort: &Cohort, statics: &FeatureTable| -> Result<Vec<(Sample, Vec<ChannelGp>)>, GpError> {
        cohort
            .patients
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let (completed, fits) =
                    complete_patient(p, &scalers, &config.gp.fit, config.seed)?;
                let sample = Sample {
                    id: p.patient_id.clone(),
                    label: config.target.label_of(p).expect("labeled subset"),
                    static_row: statics.rows[i].clone(),
                    completed,
                };
                Ok((sample, fits))
            })
            .collect()
    };

    let train_built = build(&train, &train_statics)?;
    let test_built = build(&test, &test_statics)?;

    let mut train_samples: Vec<Sample> = Vec::with_capacity(train_built.len());
    let mut train_fits: Vec<Vec<ChannelGp>> = Vec::with_capacity(train_built.len());
    for (s, f) in train_built {
        train_samples.push(s);
        train_fits.push(f);
    }

    // Synthetic augmentation of training patients only.
    if config.gp.augment > 0 {
        let mut clones = Vec::new();
        for (idx, p) in train.patients.iter().enumerate() {
            let base = &train_samples[idx];
            for k in 1..=config.gp.augment {
                let mut completed = vec![None; ChannelId::ALL.len()];
                for gp in &train_fits[idx] {
                    let seed = derive_seed(
                        config.seed,
                        &["augment", &p.patient_id, gp.channel_id.as_str(), &k.to_string()],
                    );
                    completed[channel_index(gp.channel_id)] = Some(synthetic_channel(gp, seed)?);
                }
                clones.push(Sample {
                    id: format!("{}~aug{k}", p.patient_id),
                    label: base.label,
                    static_row: base.static_row.clone(),
                    completed,
                });
            }
        }
        train_samples.extend(clones);
    }

    let test_samples: Vec<Sample> = test_built.into_iter().map(|(s, _)| s).collect();

    let artifacts = PipelineArtifacts {
        fingerprint: config.fingerprint(),
        cutoff,
        funnel,
        train_ids: train_samples.iter().map(|s| s.id.clone()).collect(),
        test_ids: test_samples.iter().map(|s| s.id.clone()).collect(),
        encoder,
        channel_scalers: scalers,
        selected_columns: None,
        chosen_hyperparameter: None,
        warnings,
    };

    Ok(Prepared {
        train: train_samples,
        test: test_samples,
        static_names,
        artifacts,
    })
}

fn check_classes(samples: &[Sample], split: &'static str) -> Result<(), PipelineError> {
    let pos = samples.iter().filter(|s| s.label).count();
    if pos == 0 || pos == samples.len() {
        return Err(PipelineError::SingleClass { split });
    }
    Ok(())
}

fn apply_selection(
    train: &FeatureTable,
    labels: &[bool],
    selection: &SelectionConfig,
    l2: f64,
) -> Result<Option<Vec<usize>>, PipelineError> {
    match selection {
        SelectionConfig::None => Ok(None),
        SelectionConfig::AnovaTopK { k } => {
            let f = anova_f(train, labels)?;
            let mut order: Vec<usize> = (0..f.len()).collect();
            order.sort_by(|&a, &b| {
                f[b].partial_cmp(&f[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
            });
            let mut kept: Vec<usize> = order.into_iter().take(*k.min(&f.len())).collect();
            kept.sort_unstable();
            Ok(Some(kept))
        }
        SelectionConfig::Rfe { keep } => Ok(Some(rfe(train, labels, *keep, l2)?)),
    }
}

fn eval_logistic(
    prepared: &Prepared,
    config: &RunConfig,
    artifacts: &mut PipelineArtifacts,
) -> Result<(Vec<f64>, Vec<bool>, LogisticModel), PipelineError> {
    let train_labels: Vec<bool> = prepared.train.iter().map(|s| s.label).collect();
    let test_labels: Vec<bool> = prepared.test.iter().map(|s| s.label).collect();

    let train_table = feature_table(
        &prepared.train,
        &prepared.static_names,
        &artifacts.channel_scalers,
        &config.window,
    )?;
    let test_table = feature_table(
        &prepared.test,
        &prepared.static_names,
        &artifacts.channel_scalers,
        &config.window,
    )?;

    let selected = apply_selection(
        &train_table,
        &train_labels,
        &config.selection,
        config.logistic.l2,
    )?;
    let (train_table, test_table) = match &selected {
        Some(idx) => (train_table.select(idx), test_table.select(idx)),
        None => (train_table, test_table),
    };
    artifacts.selected_columns = Some(train_table.column_names.clone());

    // CV over the l2 grid on training rows only; a single candidate
    // skips the fold machinery entirely.
    let grid = &config.cv.logistic_l2_grid;
    let l2 = if grid.len() <= 1 {
        grid.first().copied().unwrap_or(config.logistic.l2)
    } else {
        let folds = stratified_kfold(
            &train_labels,
            config.cv.folds,
            derive_seed(config.seed, &["cv", "logistic"]),
        )?;
        let mut best = (f64::NEG_INFINITY, grid[0]);
        for &candidate in grid {
            let mut scores = Vec::new();
            for (tr, va) in &folds {
                let sub_train = train_table.select_rows(tr);
                let sub_val = train_table.select_rows(va);
                let sub_labels: Vec<bool> = tr.iter().map(|&i| train_labels[i]).collect();
                let val_labels: Vec<bool> = va.iter().map(|&i| train_labels[i]).collect();
                let model = fit_logistic(
                    &sub_train,
                    &sub_labels,
                    candidate,
                    config.logistic.max_iter,
                    config.logistic.tol,
                )?;
                scores.push(auroc(&predict_logistic(&model, &sub_val), &val_labels)?);
            }
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            // Strict improvement keeps the earliest (by convention the
            // simplest, most-regularized-first) candidate on ties.
            if mean > best.0 {
                best = (mean, candidate);
            }
        }
        artifacts.chosen_hyperparameter = Some(best.1);
        best.1
    };

    let model = fit_logistic(
        &train_table,
        &train_labels,
        l2,
        config.logistic.max_iter,
        config.logistic.tol,
    )?;
    let scores = predict_logistic(&model, &test_table);
    Ok((scores, test_labels, model))
}

fn eval_transformer(
    prepared: &Prepared,
    config: &RunConfig,
    mode: FusionMode,
    artifacts: &mut PipelineArtifacts,
) -> Result<(Vec<f64>, Vec<bool>, Checkpoint), PipelineError> {
    let train_labels: Vec<bool> = prepared.train.iter().map(|s| s.label).collect();
    let scalers = &artifacts.channel_scalers;

    // Carve a stratified split out of the training rows; it only chooses
    // the epoch budget, the final model is refit on all rows.
    let folds = stratified_kfold(
        &train_labels,
        5,
        derive_seed(config.seed, &["early-stop"]),
    )?;
    let (fit_idx, val_idx) = &folds[0];
    let fit_samples: Vec<&Sample> = fit_idx.iter().map(|&i| &prepared.train[i]).collect();
    let val_samples: Vec<&Sample> = val_idx.iter().map(|&i| &prepared.train[i]).collect();

    let owned = |refs: &[&Sample]| -> Batch {
        let n_static = prepared.static_names.len();
        Batch {
            ts: refs.iter().map(|s| sample_tensor(s, scalers)).collect(),
            statics: DMatrix::from_fn(refs.len(), n_static, |i, j| refs[i].static_row[j]),
            labels: refs.iter().map(|s| s.label).collect(),
        }
    };
    let fit_batch = owned(&fit_samples);
    let val_batch = owned(&val_samples);

    let mut model_config = config.transformer.clone();
    model_config.mode = mode;
    let n_channels = ChannelId::ALL.len();
    let n_static = prepared.static_names.len();

    let run = |lr: f64, train_b: &Batch, val_b: &Batch, tag: &str| -> Result<_, PipelineError> {
        let init_seed = derive_seed(config.seed, &["init", tag]);
        let model = FusionModel::init(&model_config, n_channels, n_static, init_seed)?;
        let train_config = TrainConfig {
            learning_rate: lr,
            ..config.train.clone()
        };
        let ckpt = transformer_train(
            model,
            train_b,
            Some(val_b),
            &train_config,
            derive_seed(config.seed, &["train", tag]),
        )?;
        Ok(ckpt)
    };

    // Early stopping picked the epoch budget on the carve-out; the final
    // model is refit on every training row for exactly that many epochs.
    let refit = |lr: f64, best_epoch: usize, tag: &str| -> Result<_, PipelineError> {
        let all_samples: Vec<&Sample> = prepared.train.iter().collect();
        let all_batch = owned(&all_samples);
        let init_seed = derive_seed(config.seed, &["init", tag]);
        let model = FusionModel::init(&model_config, n_channels, n_static, init_seed)?;
        let train_config = TrainConfig {
            learning_rate: lr,
            epochs: best_epoch + 1,
            early_stop_patience: 0,
            ..config.train.clone()
        };
        let ckpt = transformer_train(
            model,
            &all_batch,
            None,
            &train_config,
            derive_seed(config.seed, &["train", tag]),
        )?;
        Ok(ckpt)
    };

    let grid = &config.cv.transformer_lr_grid;
    let lr = if grid.len() <= 1 {
        grid.first().copied().unwrap_or(config.train.learning_rate)
    } else {
        let mut best = (f64::NEG_INFINITY, grid[0]);
        for &candidate in grid {
            let ckpt = run(candidate, &fit_batch, &val_batch, &format!("cv-{candidate}"))?;
            let score = ckpt.best_val_auroc.unwrap_or(f64::NEG_INFINITY);
            if score > best.0 {
                best = (score, candidate);
            }
        }
        artifacts.chosen_hyperparameter = Some(best.1);
        best.1
    };

    let early = run(lr, &fit_batch, &val_batch, "early-stop")?;
    let mut ckpt = refit(lr, early.best_epoch, "final")?;
    ckpt.best_val_auroc = early.best_val_auroc;
    let test_batch = batch_of(&prepared.test, scalers);
    let scores = transformer_predict(&ckpt.model, &test_batch)?;
    Ok((scores, test_batch.labels, ckpt))
}

/// The model produced by a training run, for persistence by callers.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Logistic(LogisticModel),
    Transformer(Checkpoint),
}

/// Runs the full leak-free experiment and returns the report together
/// with every fitted statistic.
pub fn run_experiment(
    cohort: &Cohort,
    config: &RunConfig,
) -> Result<(EvalReport, PipelineArtifacts), PipelineError> {
    let (report, artifacts, _) = run_trained(cohort, config)?;
    Ok((report, artifacts))
}

/// Like [`run_experiment`] but also returns the trained model.
pub fn run_trained(
    cohort: &Cohort,
    config: &RunConfig,
) -> Result<(EvalReport, PipelineArtifacts, TrainedModel), PipelineError> {
    let prepared = prepare(cohort, config)?;
    check_classes(&prepared.train, "train")?;
    check_classes(&prepared.test, "test")?;

    let mut artifacts = prepared.artifacts.clone();
    let (scores, labels, model) = match config.model {
        ModelKind::Logistic => {
            let (s, l, m) = eval_logistic(&prepared, config, &mut artifacts)?;
            (s, l, TrainedModel::Logistic(m))
        }
        ModelKind::Multimodal => {
            let (s, l, m) =
                eval_transformer(&prepared, config, FusionMode::Multimodal, &mut artifacts)?;
            (s, l, TrainedModel::Transformer(m))
        }
        ModelKind::UnimodalTs => {
            let (s, l, m) =
                eval_transformer(&prepared, config, FusionMode::UnimodalTs, &mut artifacts)?;
            (s, l, TrainedModel::Transformer(m))
        }
    };

    let report = build_report(&scores, &labels, &artifacts)?;
    Ok((report, artifacts, model))
}

/// Evaluates a previously trained model on the test split of `cohort`,
/// re-deriving the same leak-free preparation from `config`.
pub fn evaluate_model(
    cohort: &Cohort,
    config: &RunConfig,
    model: &TrainedModel,
) -> Result<EvalReport, PipelineError> {
    let prepared = prepare(cohort, config)?;
    check_classes(&prepared.test, "test")?;
    let artifacts = prepared.artifacts.clone();
    let (scores, labels) = match model {
        TrainedModel::Logistic(m) => {
            let table = feature_table(
                &prepared.test,
                &prepared.static_names,
                &artifacts.channel_scalers,
                &config.window,
            )?;
            // Align columns to the model's training-time selection.
            let indices: Vec<usize> = m
                .column_names
                .iter()
                .map(|n| {
                    table
                        .column_names
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| {
                            PipelineError::Table(TableError::MissingColumn { name: n.clone() })
                        })
                })
                .collect::<Result<_, _>>()?;
            let table = table.select(&indices);
            let labels: Vec<bool> = prepared.test.iter().map(|s| s.label).collect();
            (predict_logistic(m, &table), labels)
        }
        TrainedModel::Transformer(ckpt) => {
            let batch = batch_of(&prepared.test, &artifacts.channel_scalers);
            let labels = batch.labels.clone();
            (transformer_predict(&ckpt.model, &batch)?, labels)
        }
    };
    build_report(&scores, &labels, &artifacts)
}

/// Runs the multimodal and unimodal ablation on identical prepared data
/// (same splits, encoder, scalers, GP completions), so the comparison
/// is paired sample-for-sample.
pub fn run_ablation_pair(
    cohort: &Cohort,
    config: &RunConfig,
) -> Result<(EvalReport, EvalReport), PipelineError> {
    let prepared = prepare(cohort, config)?;
    check_classes(&prepared.train, "train")?;
    check_classes(&prepared.test, "test")?;

    let mut artifacts = prepared.artifacts.clone();
    let (multi_scores, labels, _) =
        eval_transformer(&prepared, config, FusionMode::Multimodal, &mut artifacts)?;
    let (uni_scores, _, _) =
        eval_transformer(&prepared, config, FusionMode::UnimodalTs, &mut artifacts)?;

    let multi = build_report(&multi_scores, &labels, &artifacts)?;
    let uni = build_report(&uni_scores, &labels, &artifacts)?;
    Ok((multi, uni))
}

fn build_report(
    scores: &[f64],
    labels: &[bool],
    artifacts: &PipelineArtifacts,
) -> Result<EvalReport, PipelineError> {
    let area = auroc(scores, labels)?;
    let roc = roc_points(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok(EvalReport {
        auroc: area,
        roc_points: roc,
        n_pos,
        n_neg: labels.len() - n_pos,
        split_descriptor: format!(
            "temporal cutoff {}, train {} / test {}",
            artifacts.cutoff,
            artifacts.train_ids.len(),
            artifacts.test_ids.len()
        ),
        config_fingerprint: artifacts.fingerprint.clone(),
        funnel: artifacts.funnel.clone(),
        train_size: artifacts.train_ids.len(),
        test_size: artifacts.test_ids.len(),
        warnings: artifacts.warnings.clone(),
    })
}

/// Standalone feature extraction for the CLI: encoded statics joined
/// with windowed features over GP-completed trajectories. Encoder and
/// scalers are fit on the whole input cohort (no train/test split).
pub fn cohort_features(
    cohort: &Cohort,
    encoding: &crate::cohort::EncodingSpec,
    window: &crate::features::WindowSpec,
    options: &FitOptions,
    seed: u64,
) -> Result<FeatureTable, PipelineError> {
    if cohort.is_empty() {
        return Err(PipelineError::EmptyCohort);
    }
    let encoder = fit_static_encoder(cohort, encoding)?;
    let statics = encode_static(cohort, &encoder);
    let scalers = fit_channel_scalers(cohort);
    let samples: Vec<Sample> = cohort
        .patients
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (completed, _) = complete_patient(p, &scalers, options, seed)?;
            Ok(Sample {
                id: p.patient_id.clone(),
                label: false,
                static_row: statics.rows[i].clone(),
                completed,
            })
        })
        .collect::<Result<_, GpError>>()?;
    Ok(feature_table(
        &samples,
        &statics.column_names,
        &scalers,
        window,
    )?)
}

/// Summary of a standalone imputation pass.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ImputationSummary {
    pub fits_attempted: usize,
    pub fits_succeeded: usize,
    pub mean_lml: f64,
}

/// Standalone imputation for the CLI: fits a GP per (patient, channel),
/// replaces each channel with its completed daily trajectory (observed
/// values preserved bitwise), and optionally appends synthetic clones.
/// Channel scalers are fit on the whole input cohort.
pub fn impute_cohort(
    cohort: &Cohort,
    options: &FitOptions,
    augment: usize,
    seed: u64,
) -> Result<(Cohort, Vec<ChannelGpRecord>, ImputationSummary), PipelineError> {
    let scalers = fit_channel_scalers(cohort);
    let results: Vec<Result<(PatientRecord, Vec<ChannelGp>), GpError>> = cohort
        .patients
        .par_iter()
        .map(|p| {
            let (completed, fits) = complete_patient(p, &scalers, options, seed)?;
            let mut dense = p.clone();
            for channel in &mut dense.channels {
                let traj = completed[channel_index(channel.channel_id)]
                    .as_ref()
                    .expect("completed above");
                channel.samples = traj
                    .iter()
                    .enumerate()
                    .map(|(d, &v)| (d as u32, v))
                    .collect();
            }
            Ok((dense, fits))
        })
        .collect();

    let mut patients = Vec::with_capacity(cohort.len());
    let mut records = Vec::new();
    let mut attempted = 0usize;
    let mut lml_sum = 0.0;
    let mut clones = Vec::new();
    for (p, result) in cohort.patients.iter().zip(results) {
        attempted += p.channels.len();
        let (dense, fits) = result?;
        for gp in &fits {
            lml_sum += gp.fit.lml;
            records.push(gp.to_record(&p.patient_id));
        }
        if augment > 0 {
            clones.extend(augment_patient(
                p,
                &fits,
                augment,
                derive_seed(seed, &["augment", &p.patient_id]),
            ));
        }
        patients.push(dense);
    }
    let succeeded = records.len();
    patients.extend(clones);

    let summary = ImputationSummary {
        fits_attempted: attempted,
        fits_succeeded: succeeded,
        mean_lml: if succeeded > 0 {
            lml_sum / succeeded as f64
        } else {
            f64::NAN
        },
    };
    Ok((
        Cohort::new(patients, format!("{} +imputed", cohort.provenance)),
        records,
        summary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SignalStrength, SimConfig};

    fn small_config() -> RunConfig {
        RunConfig {
            model: ModelKind::Logistic,
            gp: crate::config::GpPipelineConfig {
                fit: FitOptions {
                    restarts: 1,
                    max_iters: 15,
                },
                augment: 0,
            },
            ..RunConfig::default()
        }
    }

    fn small_cohort(seed: u64, strength: SignalStrength) -> Cohort {
        let (cohort, _) = generate(&SimConfig {
            n_patients: 60,
            signal_strength: strength,
            seed,
            ..SimConfig::default()
        })
        .unwrap();
        cohort
    }

    #[test]
    fn logistic_run_is_deterministic() {
        let cohort = small_cohort(1, SignalStrength::Strong);
        let config = small_config();
        let (r1, a1) = run_experiment(&cohort, &config).unwrap();
        let (r2, a2) = run_experiment(&cohort, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a1).unwrap(),
            serde_json::to_string(&a2).unwrap()
        );
    }

    #[test]
    fn artifacts_do_not_depend_on_test_rows() {
        let cohort = small_cohort(2, SignalStrength::Weak);
        let config = small_config();
        let (_, base) = run_experiment(&cohort, &config).unwrap();

        // Perturb channel values of every test patient.
        let mut perturbed = cohort.clone();
        for p in &mut perturbed.patients {
            if base.test_ids.contains(&p.patient_id) {
                for c in &mut p.channels {
                    for s in &mut c.samples {
                        s.1 += 3.5;
                    }
                }
            }
        }
        let (_, after) = run_experiment(&perturbed, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&base.encoder).unwrap(),
            serde_json::to_string(&after.encoder).unwrap()
        );
        assert_eq!(base.channel_scalers, after.channel_scalers);
        assert_eq!(base.selected_columns, after.selected_columns);
        assert_eq!(base.chosen_hyperparameter, after.chosen_hyperparameter);
    }

    #[test]
    fn funnel_counts_are_consistent() {
        let cohort = small_cohort(3, SignalStrength::None);
        let (report, artifacts) = run_experiment(&cohort, &small_config()).unwrap();
        assert_eq!(artifacts.funnel["input"], cohort.len());
        assert_eq!(
            report.train_size + report.test_size,
            artifacts.funnel["retained"]
        );
        assert!(report.auroc.is_finite());
    }

    #[test]
    fn augmentation_grows_training_set_only() {
        let cohort = small_cohort(4, SignalStrength::Weak);
        let mut config = small_config();
        let (_, base) = run_experiment(&cohort, &config).unwrap();
        config.gp.augment = 2;
        let (_, augmented) = run_experiment(&cohort, &config).unwrap();
        assert_eq!(augmented.train_ids.len(), 3 * base.train_ids.len());
        assert_eq!(augmented.test_ids, base.test_ids);
        assert!(augmented.train_ids.iter().any(|id| id.contains("~aug")));
    }

    #[test]
    fn transformer_modes_run_end_to_end() {
        let cohort = small_cohort(5, SignalStrength::Strong);
        let mut config = small_config();
        config.model = ModelKind::Multimodal;
        config.transformer = crate::transformer::ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 1,
            ff_dim: 16,
            head_dim: 4,
            dropout_rate: 0.0,
            max_seq_len: 87,
            mode: FusionMode::Multimodal,
        };
        config.train = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (multi, uni) = run_ablation_pair(&cohort, &config).unwrap();
        assert!(multi.auroc.is_finite() && uni.auroc.is_finite());
        assert_eq!(multi.test_size, uni.test_size);
    }

    #[test]
    fn imputation_preserves_observed_and_counts_clones() {
        let cohort = small_cohort(6, SignalStrength::None);
        let options = FitOptions {
            restarts: 1,
            max_iters: 15,
        };
        let (dense, records, summary) = impute_cohort(&cohort, &options, 2, 11).unwrap();
        assert_eq!(dense.len(), 3 * cohort.len());
        assert_eq!(summary.fits_attempted, summary.fits_succeeded);
        assert!(!records.is_empty());
        assert!(summary.mean_lml.is_finite());

        // Observed values survive bitwise; all channels are daily-dense.
        for (orig, comp) in cohort.patients.iter().zip(&dense.patients) {
            for oc in &orig.channels {
                let cc = comp.channel(oc.channel_id).unwrap();
                assert_eq!(cc.samples.len(), WINDOW_DAYS);
                for &(day, value) in &oc.samples {
                    assert_eq!(cc.samples[day as usize].1.to_bits(), value.to_bits());
                }
            }
        }
    }

    #[test]
    fn logistic_auroc_monotone_in_signal_strength() {
        let strengths = [
            SignalStrength::None,
            SignalStrength::Weak,
            SignalStrength::Strong,
        ];
        let mut means = Vec::new();
        for strength in strengths {
            let mut sum = 0.0;
            let mut n = 0usize;
            for seed in 60..66u64 {
                let (cohort, _) = generate(&SimConfig {
                    n_patients: 150,
                    signal_strength: strength,
                    seed,
                    ..SimConfig::default()
                })
                .unwrap();
                let mut config = small_config();
                config.gp.fit.max_iters = 8;
                config.train_fraction = 0.5;
                if let Ok((report, _)) = run_experiment(&cohort, &config) {
                    sum += report.auroc;
                    n += 1;
                }
            }
            assert!(n >= 4, "too few evaluable seeds for {strength:?}");
            means.push(sum / n as f64);
        }
        assert!(
            means[0] <= means[1] && means[1] <= means[2],
            "not monotone: {means:?}"
        );
    }

    #[test]
    fn single_class_test_split_is_rejected() {
        let mut cohort = small_cohort(7, SignalStrength::None);
        // Force every label positive.
        for p in &mut cohort.patients {
            p.label_w48 = Some(true);
        }
        assert!(matches!(
            run_experiment(&cohort, &small_config()),
            Err(PipelineError::SingleClass { .. })
        ));
    }
}
