//! Adam training loop with early stopping and checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::derive_seed;
use crate::eval::auroc;

use super::model::{sample_loss_and_grad, Batch};
use super::params::{CheckpointManifest, FusionModel};
use super::ModelError;

/// Optimizer and schedule settings; model architecture lives in
/// [`super::ModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Decoupled weight decay applied to weight matrices only (not
    /// biases, layer-norm parameters, CLS, or positional embeddings).
    pub weight_decay: f64,
    /// Epochs without validation-AUROC improvement before stopping;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    /// Reweight positive samples by n_neg / n_pos in the loss.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            weight_decay: 1e-4,
            early_stop_patience: 10,
            class_weighting: true,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: Option<f64>,
}

/// Trained model plus its history; the model is the best-validation
/// snapshot when validation data was provided, otherwise the final one.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let manifest = self.model.to_manifest(self.seed, self.history.clone());
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint, ModelError> {
        let json =
            std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let model = FusionModel::from_manifest(&manifest)?;
        let history = manifest.history.clone();
        let (best_epoch, best_val_auroc) = best_of(&history);
        Ok(Checkpoint {
            model,
            history,
            best_epoch,
            best_val_auroc,
            seed: manifest.seed,
        })
    }
}

fn best_of(history: &[EpochStats]) -> (usize, Option<f64>) {
    let mut best_epoch = history.len().saturating_sub(1);
    let mut best: Option<f64> = None;
    for s in history {
        if let Some(v) = s.val_auroc {
            if best.map_or(true, |b| v > b) {
                best = Some(v);
                best_epoch = s.epoch;
            }
        }
    }
    (best_epoch, best)
}

/// Deterministic pure-eval predictions (no dropout).
pub fn predict(model: &FusionModel, batch: &Batch) -> Result<Vec<f64>, ModelError> {
    super::model::forward(batch, model, None)
}

/// Tensor names eligible for weight decay: projection and feed-forward
/// weight matrices only.
fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.contains('w')
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains `model` on `train_data` with Adam. Per-sample gradients are
/// computed in parallel but summed in index order, so results are
/// bitwise reproducible for a given seed regardless of thread count.
pub fn train(
    mut model: FusionModel,
    train_data: &Batch,
    val_data: Option<&Batch>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint, ModelError> {
    if train_data.is_empty() {
        return Err(ModelError::Config("empty training set".into()));
    }
    let n_pos = train_data.labels.iter().filter(|&&l| l).count();
    let n_neg = train_data.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::SingleClass);
    }
    let pos_weight = if cfg.class_weighting {
        n_neg as f64 / n_pos as f64
    } else {
        1.0
    };

    let n_params = model.n_params();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut step = 0usize;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_model = model.clone();
    let mut best_val: Option<f64> = None;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["shuffle"]));
    let batch_size = cfg.batch_size.max(1);
    let dropout_on = model.config.dropout_rate > 0.0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for (mb_idx, chunk) in order.chunks(batch_size).enumerate() {
            let results: Vec<Result<(f64, FusionModel), ModelError>> = chunk
                .par_iter()
                .map(|&i| {
                    let static_row = nalgebra::DMatrix::from_fn(
                        1,
                        train_data.statics.ncols(),
                        |_, j| train_data.statics[(i, j)],
                    );
                    let mut rng = if dropout_on {
                        Some(ChaCha8Rng::seed_from_u64(derive_seed(
                            seed,
                            &[
                                "dropout",
                                &epoch.to_string(),
                                &mb_idx.to_string(),
                                &i.to_string(),
                            ],
                        )))
                    } else {
                        None
                    };
                    sample_loss_and_grad(
                        &train_data.ts[i],
                        &static_row,
                        train_data.labels[i],
                        &model,
                        pos_weight,
                        rng.as_mut(),
                    )
                })
                .collect();

            let mut grads = model.zeros_like();
            let mut batch_loss = 0.0;
            let inv_b = 1.0 / chunk.len() as f64;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss * inv_b;
                grads.axpy(inv_b, &g);
            }
            epoch_loss += batch_loss * chunk.len() as f64 / train_data.len() as f64;

            // Adam with decoupled weight decay.
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            let mut offset = 0usize;
            let gtensors: Vec<(String, Vec<f64>)> = grads
                .tensors()
                .into_iter()
                .map(|t| (t.name, t.tensor.iter().copied().collect()))
                .collect();
            for ((name, param), (gname, gdata)) in model.tensors_mut().into_iter().zip(gtensors) {
                debug_assert_eq!(name, gname);
                let wd = if cfg.weight_decay > 0.0 && decays(&name) {
                    cfg.weight_decay
                } else {
                    0.0
                };
                for (pi, p) in param.iter_mut().enumerate() {
                    let g = gdata[pi];
                    let k = offset + pi;
                    m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                    v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    *p -= cfg.learning_rate * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * *p);
                }
                offset += gdata.len();
            }

            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
        }

        if !model.all_finite() {
            return Err(ModelError::Diverged { epoch });
        }

        let val_auroc = match val_data {
            Some(vb) => {
                let scores = predict(&model, vb)?;
                Some(auroc(&scores, &vb.labels)?)
            }
            None => None,
        };
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            val_auroc,
        });

        match val_auroc {
            Some(va) => {
                if best_val.map_or(true, |b| va > b) {
                    best_val = Some(va);
                    best_epoch = epoch;
                    best_model = model.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                        break;
                    }
                }
            }
            None => {
                best_epoch = epoch;
                best_model = model.clone();
            }
        }
    }

    Ok(Checkpoint {
        model: best_model,
        history,
        best_epoch,
        best_val_auroc: best_val,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{FusionMode, ModelConfig};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 1,
            ff_dim: 16,
            head_dim: 4,
            dropout_rate: 0.0,
            max_seq_len: 12,
            mode: FusionMode::Multimodal,
        }
    }

    /// Labels follow the sign of the mean of channel 0; statics are noise.
    fn separable_batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2 == 0;
            let shift = if label { 1.5 } else { -1.5 };
            ts.push(DMatrix::from_fn(6, 3, |_, c| {
                let noise: f64 = rng.gen_range(-0.3..0.3);
                if c == 0 {
                    shift + noise
                } else {
                    noise
                }
            }));
            labels.push(label);
        }
        let statics = DMatrix::from_fn(n, 4, |_, _| rng.gen_range(-1.0..1.0));
        Batch { ts, statics, labels }
    }

    #[test]
    fn learns_separable_signal() {
        let cfg = tiny_config();
        let model = FusionModel::init(&cfg, 3, 4, 5).unwrap();
        let train_b = separable_batch(48, 1);
        let val_b = separable_batch(24, 2);
        let tc = TrainConfig {
            epochs: 40,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let ckpt = train(model, &train_b, Some(&val_b), &tc, 7).unwrap();
        let test_b = separable_batch(24, 3);
        let scores = predict(&ckpt.model, &test_b).unwrap();
        let a = auroc(&scores, &test_b.labels).unwrap();
        assert!(a > 0.9, "test AUROC {a}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = ModelConfig {
            dropout_rate: 0.1,
            ..tiny_config()
        };
        let train_b = separable_batch(24, 1);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = |s: u64| {
            let model = FusionModel::init(&cfg, 3, 4, s).unwrap();
            train(model, &train_b, None, &tc, s).unwrap()
        };
        let a = run(9);
        let b = run(9);
        let fa = a.model.to_flat();
        let fb = b.model.to_flat();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn different_seed_changes_training() {
        let cfg = tiny_config();
        let train_b = separable_batch(24, 1);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train(FusionModel::init(&cfg, 3, 4, 1).unwrap(), &train_b, None, &tc, 1).unwrap();
        let b = train(FusionModel::init(&cfg, 3, 4, 2).unwrap(), &train_b, None, &tc, 2).unwrap();
        assert_ne!(a.model.to_flat(), b.model.to_flat());
    }

    #[test]
    fn single_class_rejected() {
        let cfg = tiny_config();
        let model = FusionModel::init(&cfg, 3, 4, 5).unwrap();
        let mut b = separable_batch(8, 1);
        for l in &mut b.labels {
            *l = true;
        }
        assert!(matches!(
            train(model, &b, None, &TrainConfig::default(), 0),
            Err(ModelError::SingleClass)
        ));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let cfg = tiny_config();
        let model = FusionModel::init(&cfg, 3, 4, 5).unwrap();
        let train_b = separable_batch(16, 1);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let ckpt = train(model, &train_b, None, &tc, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let test_b = separable_batch(8, 4);
        let p1 = predict(&ckpt.model, &test_b).unwrap();
        let p2 = predict(&loaded.model, &test_b).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(loaded.history, ckpt.history);
    }

    #[test]
    fn early_stopping_halts_after_patience() {
        let cfg = tiny_config();
        let model = FusionModel::init(&cfg, 3, 4, 5).unwrap();
        // Validation labels are random noise, so AUROC cannot steadily
        // improve and patience must trigger well before the epoch cap.
        let train_b = separable_batch(16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut val_b = separable_batch(16, 2);
        for l in &mut val_b.labels {
            *l = rng.gen_bool(0.5);
        }
        if val_b.labels.iter().all(|&l| l) || val_b.labels.iter().all(|&l| !l) {
            val_b.labels[0] = !val_b.labels[0];
        }
        let tc = TrainConfig {
            epochs: 200,
            batch_size: 8,
            early_stop_patience: 3,
            ..TrainConfig::default()
        };
        let ckpt = train(model, &train_b, Some(&val_b), &tc, 3).unwrap();
        assert!(ckpt.history.len() < 200, "ran {} epochs", ckpt.history.len());
    }
}
