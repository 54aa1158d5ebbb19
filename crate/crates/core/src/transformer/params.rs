//! Parameter storage for the fusion transformer, with a stable tensor
//! enumeration used by the optimizer, gradient checks, and checkpoints.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FusionMode, ModelConfig, ModelError};

/// A named view over one parameter tensor for generic traversal.
pub struct ParamTensor<'a> {
    pub name: String,
    pub tensor: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: DMatrix<f64>,
    pub ln1_b: DMatrix<f64>,
    pub wq: DMatrix<f64>,
    pub bq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub bk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub bv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    pub bo: DMatrix<f64>,
    pub ln2_g: DMatrix<f64>,
    pub ln2_b: DMatrix<f64>,
    pub ff_w1: DMatrix<f64>,
    pub ff_b1: DMatrix<f64>,
    pub ff_w2: DMatrix<f64>,
    pub ff_b2: DMatrix<f64>,
}

/// Full weight set: time-step input projection, static-projection FFN,
/// learned CLS vector, learned positional embeddings, encoder blocks,
/// and the MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub n_channels: usize,
    pub static_dim: usize,
    pub w_in: DMatrix<f64>,
    pub b_in: DMatrix<f64>,
    pub static_w1: DMatrix<f64>,
    pub static_b1: DMatrix<f64>,
    pub static_w2: DMatrix<f64>,
    pub static_b2: DMatrix<f64>,
    pub cls: DMatrix<f64>,
    pub pos: DMatrix<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_w1: DMatrix<f64>,
    pub head_b1: DMatrix<f64>,
    pub head_w2: DMatrix<f64>,
    pub head_b2: DMatrix<f64>,
}

impl FusionModel {
    /// Seeded initialization: fan-in scaled Gaussians for projections,
    /// zeros for biases, unit gains for normalization layers, CLS and
    /// positional embeddings ~ N(0, 0.02^2).
    pub fn init(
        config: &ModelConfig,
        n_channels: usize,
        static_dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.ff_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| -> DMatrix<f64> {
            let dist = Normal::new(0.0, std).expect("valid std");
            DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
        };
        let fan = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();

        let blocks = (0..config.n_blocks)
            .map(|_| BlockParams {
                ln1_g: DMatrix::from_element(1, d, 1.0),
                ln1_b: DMatrix::zeros(1, d),
                wq: gauss(d, d, fan(d)),
                bq: DMatrix::zeros(1, d),
                wk: gauss(d, d, fan(d)),
                bk: DMatrix::zeros(1, d),
                wv: gauss(d, d, fan(d)),
                bv: DMatrix::zeros(1, d),
                wo: gauss(d, d, fan(d)),
                bo: DMatrix::zeros(1, d),
                ln2_g: DMatrix::from_element(1, d, 1.0),
                ln2_b: DMatrix::zeros(1, d),
                ff_w1: gauss(d, ff, fan(d)),
                ff_b1: DMatrix::zeros(1, ff),
                ff_w2: gauss(ff, d, fan(ff)),
                ff_b2: DMatrix::zeros(1, d),
            })
            .collect();

        Ok(FusionModel {
            config: config.clone(),
            n_channels,
            static_dim,
            w_in: gauss(n_channels, d, fan(n_channels)),
            b_in: DMatrix::zeros(1, d),
            static_w1: gauss(static_dim, ff, fan(static_dim.max(1))),
            static_b1: DMatrix::zeros(1, ff),
            static_w2: gauss(ff, d, fan(ff)),
            static_b2: DMatrix::zeros(1, d),
            cls: gauss(1, d, 0.02),
            pos: gauss(config.max_seq_len, d, 0.02),
            blocks,
            head_w1: gauss(d, config.head_dim, fan(d)),
            head_b1: DMatrix::zeros(1, config.head_dim),
            head_w2: gauss(config.head_dim, 1, fan(config.head_dim)),
            head_b2: DMatrix::zeros(1, 1),
        })
    }

    /// Same shapes, all zeros; gradient and optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Stable tensor enumeration. The order defines the flat-vector
    /// layout used by checkpoints and gradient checks.
    pub fn tensors(&self) -> Vec<ParamTensor<'_>> {
        let mut out = vec![
            ParamTensor { name: "w_in".into(), tensor: &self.w_in },
            ParamTensor { name: "b_in".into(), tensor: &self.b_in },
            ParamTensor { name: "static_w1".into(), tensor: &self.static_w1 },
            ParamTensor { name: "static_b1".into(), tensor: &self.static_b1 },
            ParamTensor { name: "static_w2".into(), tensor: &self.static_w2 },
            ParamTensor { name: "static_b2".into(), tensor: &self.static_b2 },
            ParamTensor { name: "cls".into(), tensor: &self.cls },
            ParamTensor { name: "pos".into(), tensor: &self.pos },
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (field, t) in [
                ("ln1_g", &b.ln1_g),
                ("ln1_b", &b.ln1_b),
                ("wq", &b.wq),
                ("bq", &b.bq),
                ("wk", &b.wk),
                ("bk", &b.bk),
                ("wv", &b.wv),
                ("bv", &b.bv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("ln2_g", &b.ln2_g),
                ("ln2_b", &b.ln2_b),
                ("ff_w1", &b.ff_w1),
                ("ff_b1", &b.ff_b1),
                ("ff_w2", &b.ff_w2),
                ("ff_b2", &b.ff_b2),
            ] {
                out.push(ParamTensor { name: format!("block{i}.{field}"), tensor: t });
            }
        }
        out.push(ParamTensor { name: "head_w1".into(), tensor: &self.head_w1 });
        out.push(ParamTensor { name: "head_b1".into(), tensor: &self.head_b1 });
        out.push(ParamTensor { name: "head_w2".into(), tensor: &self.head_w2 });
        out.push(ParamTensor { name: "head_b2".into(), tensor: &self.head_b2 });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DMatrix<f64>)> {
        let mut out: Vec<(String, &mut DMatrix<f64>)> = vec![
            ("w_in".into(), &mut self.w_in),
            ("b_in".into(), &mut self.b_in),
            ("static_w1".into(), &mut self.static_w1),
            ("static_b1".into(), &mut self.static_b1),
            ("static_w2".into(), &mut self.static_w2),
            ("static_b2".into(), &mut self.static_b2),
            ("cls".into(), &mut self.cls),
            ("pos".into(), &mut self.pos),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (field, t) in [
                ("ln1_g", &mut b.ln1_g),
                ("ln1_b", &mut b.ln1_b),
                ("wq", &mut b.wq),
                ("bq", &mut b.bq),
                ("wk", &mut b.wk),
                ("bk", &mut b.bk),
                ("wv", &mut b.wv),
                ("bv", &mut b.bv),
                ("wo", &mut b.wo),
                ("bo", &mut b.bo),
                ("ln2_g", &mut b.ln2_g),
                ("ln2_b", &mut b.ln2_b),
                ("ff_w1", &mut b.ff_w1),
                ("ff_b1", &mut b.ff_b1),
                ("ff_w2", &mut b.ff_w2),
                ("ff_b2", &mut b.ff_b2),
            ] {
                out.push((format!("block{i}.{field}"), t));
            }
        }
        out.push(("head_w1".into(), &mut self.head_w1));
        out.push(("head_b1".into(), &mut self.head_b1));
        out.push(("head_w2".into(), &mut self.head_w2));
        out.push(("head_b2".into(), &mut self.head_b2));
        out
    }

    /// self += a * other, tensorwise.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        let theirs = other.tensors();
        for ((_, mine), t) in self.tensors_mut().into_iter().zip(theirs) {
            mine.zip_apply(t.tensor, |m, o| *m += a * o);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in self.tensors() {
            out.extend(t.tensor.iter());
        }
        out
    }

    pub fn from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.tensor.iter().all(|v| v.is_finite()))
    }

    /// When true, the static stream genuinely enters the sequence.
    pub fn uses_static(&self) -> bool {
        self.config.mode == FusionMode::Multimodal
    }
}

/// Versioned JSON checkpoint: config plus parameter name -> shape ->
/// flat row-major float array, training history, and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub n_channels: usize,
    pub static_dim: usize,
    pub seed: u64,
    pub params: Vec<CheckpointTensor>,
    pub history: Vec<super::EpochStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub data: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl FusionModel {
    pub fn to_manifest(&self, seed: u64, history: Vec<super::EpochStats>) -> CheckpointManifest {
        CheckpointManifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            n_channels: self.n_channels,
            static_dim: self.static_dim,
            seed,
            params: self
                .tensors()
                .iter()
                .map(|t| CheckpointTensor {
                    name: t.name.clone(),
                    shape: [t.tensor.nrows(), t.tensor.ncols()],
                    data: t.tensor.transpose().iter().copied().collect(),
                })
                .collect(),
            history,
        }
    }

    pub fn from_manifest(manifest: &CheckpointManifest) -> Result<Self, ModelError> {
        if manifest.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                manifest.version
            )));
        }
        let mut model = FusionModel::init(
            &manifest.config,
            manifest.n_channels,
            manifest.static_dim,
            manifest.seed,
        )?;
        let mut by_name: std::collections::BTreeMap<&str, &CheckpointTensor> =
            manifest.params.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, tensor) in model.tensors_mut() {
            let ct = by_name.remove(name.as_str()).ok_or_else(|| {
                ModelError::Checkpoint(format!("missing tensor '{name}'"))
            })?;
            if ct.shape != [tensor.nrows(), tensor.ncols()] {
                return Err(ModelError::Checkpoint(format!(
                    "tensor '{name}' shape {:?} != expected {:?}",
                    ct.shape,
                    [tensor.nrows(), tensor.ncols()]
                )));
            }
            // Stored row-major.
            for i in 0..ct.shape[0] {
                for j in 0..ct.shape[1] {
                    tensor[(i, j)] = ct.data[i * ct.shape[1] + j];
                }
            }
        }
        if !by_name.is_empty() {
            return Err(ModelError::Checkpoint(format!(
                "unexpected tensors in checkpoint: {:?}",
                by_name.keys().collect::<Vec<_>>()
            )));
        }
        Ok(model)
    }
}
