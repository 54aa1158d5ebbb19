//! Forward pass, sequence assembly, and analytic backpropagation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::FusionModel;
use super::{FusionMode, ModelError};

/// One training/evaluation batch. Time series are per-patient [T x C]
/// matrices (per-channel standardized); statics are encoded rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ts: Vec<DMatrix<f64>>,
    pub statics: DMatrix<f64>,
    pub labels: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            ts: indices.iter().map(|&i| self.ts[i].clone()).collect(),
            statics: DMatrix::from_fn(indices.len(), self.statics.ncols(), |r, c| {
                self.statics[(indices[r], c)]
            }),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;
const PROB_CLAMP: f64 = 1e-7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise layer norm; caches (xhat, inv_std) for backward.
fn layer_norm(x: &DMatrix<f64>, g: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let (l, d) = (x.nrows(), x.ncols());
    let mut xhat = DMatrix::zeros(l, d);
    let mut inv_std = Vec::with_capacity(l);
    let mut y = DMatrix::zeros(l, d);
    for i in 0..l {
        let mut mean = 0.0;
        for j in 0..d {
            mean += x[(i, j)];
        }
        mean /= d as f64;
        let mut var = 0.0;
        for j in 0..d {
            var += (x[(i, j)] - mean).powi(2);
        }
        var /= d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let xh = (x[(i, j)] - mean) * is;
            xhat[(i, j)] = xh;
            y[(i, j)] = g[(0, j)] * xh + b[(0, j)];
        }
    }
    (y, xhat, inv_std)
}

fn layer_norm_backward(
    dy: &DMatrix<f64>,
    xhat: &DMatrix<f64>,
    inv_std: &[f64],
    g: &DMatrix<f64>,
    dg: &mut DMatrix<f64>,
    db: &mut DMatrix<f64>,
) -> DMatrix<f64> {
    let (l, d) = (dy.nrows(), dy.ncols());
    let mut dx = DMatrix::zeros(l, d);
    for i in 0..l {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxh = dy[(i, j)] * g[(0, j)];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[(i, j)];
            dg[(0, j)] += dy[(i, j)] * xhat[(i, j)];
            db[(0, j)] += dy[(i, j)];
        }
        let dn = d as f64;
        for j in 0..d {
            let dxh = dy[(i, j)] * g[(0, j)];
            dx[(i, j)] = inv_std[i] / dn * (dn * dxh - sum_dxhat - xhat[(i, j)] * sum_dxhat_xhat);
        }
    }
    dx
}

fn add_row_bias(x: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            x[(i, j)] += b[(0, j)];
        }
    }
}

fn column_sums_into(x: &DMatrix<f64>, acc: &mut DMatrix<f64>) {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            acc[(0, j)] += x[(i, j)];
        }
    }
}

/// Inverted dropout; identity when rng is None (eval mode or rate 0).
fn dropout(
    x: &DMatrix<f64>,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask = DMatrix::from_fn(x.nrows(), x.ncols(), |_, _| {
                if rng.gen_bool(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            (x.component_mul(&mask), Some(mask))
        }
        _ => (x.clone(), None),
    }
}

struct BlockCache {
    x_in: DMatrix<f64>,
    h1: DMatrix<f64>,
    ln1_xhat: DMatrix<f64>,
    ln1_inv_std: Vec<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    /// Per-head attention weights, rows summing to 1.
    attn: Vec<DMatrix<f64>>,
    /// Concatenated head outputs before the output projection.
    heads_out: DMatrix<f64>,
    attn_drop: Option<DMatrix<f64>>,
    h2: DMatrix<f64>,
    ln2_xhat: DMatrix<f64>,
    ln2_inv_std: Vec<f64>,
    z1: DMatrix<f64>,
    a1: DMatrix<f64>,
    ff_drop: Option<DMatrix<f64>>,
}

struct ForwardCache {
    /// Static-token pre-activation (multimodal only).
    static_z: Option<DMatrix<f64>>,
    seq_len: usize,
    embed_drop: Option<DMatrix<f64>>,
    blocks: Vec<BlockCache>,
    x_final: DMatrix<f64>,
    head_z1: DMatrix<f64>,
    head_a1: DMatrix<f64>,
    logit: f64,
    prob: f64,
}

/// Token assembly for one sample: [CLS, static token, ts tokens] in
/// multimodal mode (static token omitted in unimodal mode), with
/// positional embeddings added after concatenation.
pub fn assemble_sequence(
    ts: &DMatrix<f64>,
    static_row: &DMatrix<f64>,
    model: &FusionModel,
) -> Result<DMatrix<f64>, ModelError> {
    let (seq, _) = assemble_with_cache(ts, static_row, model)?;
    Ok(seq)
}

fn assemble_with_cache(
    ts: &DMatrix<f64>,
    static_row: &DMatrix<f64>,
    model: &FusionModel,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>), ModelError> {
    let t_len = ts.nrows();
    let d = model.config.d_model;
    let l = model.config.seq_len(t_len);
    if l > model.config.max_seq_len {
        return Err(ModelError::Config(format!(
            "sequence length {l} exceeds max_seq_len {}",
            model.config.max_seq_len
        )));
    }

    let mut x_ts = ts * &model.w_in;
    add_row_bias(&mut x_ts, &model.b_in);

    let mut seq = DMatrix::zeros(l, d);
    seq.row_mut(0).copy_from(&model.cls.row(0));
    let mut static_z = None;
    let ts_offset = match model.config.mode {
        FusionMode::Multimodal => {
            let mut z = static_row * &model.static_w1;
            add_row_bias(&mut z, &model.static_b1);
            let h = z.map(gelu);
            let mut st = h * &model.static_w2;
            add_row_bias(&mut st, &model.static_b2);
            seq.row_mut(1).copy_from(&st.row(0));
            static_z = Some(z);
            2
        }
        FusionMode::UnimodalTs => 1,
    };
    for t in 0..t_len {
        seq.row_mut(ts_offset + t).copy_from(&x_ts.row(t));
    }
    // Positional embeddings added after concatenation.
    for i in 0..l {
        for j in 0..d {
            seq[(i, j)] += model.pos[(i, j)];
        }
    }
    Ok((seq, static_z))
}

fn forward_sample(
    ts: &DMatrix<f64>,
    static_row: &DMatrix<f64>,
    model: &FusionModel,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache, ModelError> {
    let cfg = &model.config;
    let (seq, static_z) = assemble_with_cache(ts, static_row, model)?;
    let l = seq.nrows();
    let (mut x, embed_drop) = dropout(&seq, cfg.dropout_rate, rng.as_deref_mut());

    let n_heads = cfg.n_heads;
    let dh = cfg.d_model / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut block_caches = Vec::with_capacity(model.blocks.len());
    for (bi, block) in model.blocks.iter().enumerate() {
        let x_in = x.clone();
        let (h1, ln1_xhat, ln1_inv_std) = layer_norm(&x, &block.ln1_g, &block.ln1_b);

        let mut q = &h1 * &block.wq;
        add_row_bias(&mut q, &block.bq);
        let mut k = &h1 * &block.wk;
        add_row_bias(&mut k, &block.bk);
        let mut v = &h1 * &block.wv;
        add_row_bias(&mut v, &block.bv);

        let mut attn = Vec::with_capacity(n_heads);
        let mut heads_out = DMatrix::zeros(l, cfg.d_model);
        for h in 0..n_heads {
            let qs = q.columns(h * dh, dh);
            let ks = k.columns(h * dh, dh);
            let vs = v.columns(h * dh, dh);
            let mut scores = &qs * ks.transpose();
            scores *= scale;
            // Row-wise softmax with max subtraction.
            let mut a = scores;
            for i in 0..l {
                let row_max = (0..l).map(|j| a[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..l {
                    let e = (a[(i, j)] - row_max).exp();
                    a[(i, j)] = e;
                    sum += e;
                }
                for j in 0..l {
                    a[(i, j)] /= sum;
                }
            }
            let oh = &a * vs;
            heads_out.columns_mut(h * dh, dh).copy_from(&oh);
            attn.push(a);
        }
        let mut attn_proj = &heads_out * &block.wo;
        add_row_bias(&mut attn_proj, &block.bo);
        let (attn_dropped, attn_drop) = dropout(&attn_proj, cfg.dropout_rate, rng.as_deref_mut());
        let x_mid = &x + attn_dropped;

        let (h2, ln2_xhat, ln2_inv_std) = layer_norm(&x_mid, &block.ln2_g, &block.ln2_b);
        let mut z1 = &h2 * &block.ff_w1;
        add_row_bias(&mut z1, &block.ff_b1);
        let a1 = z1.map(gelu);
        let mut f = &a1 * &block.ff_w2;
        add_row_bias(&mut f, &block.ff_b2);
        let (f_dropped, ff_drop) = dropout(&f, cfg.dropout_rate, rng.as_deref_mut());
        let x_out = &x_mid + f_dropped;

        if x_out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: bi });
        }

        block_caches.push(BlockCache {
            x_in,
            h1,
            ln1_xhat,
            ln1_inv_std,
            q,
            k,
            v,
            attn,
            heads_out,
            attn_drop,
            h2,
            ln2_xhat,
            ln2_inv_std,
            z1,
            a1,
            ff_drop,
        });
        x = x_out;
    }

    let cls_out = DMatrix::from_fn(1, cfg.d_model, |_, j| x[(0, j)]);
    let mut head_z1 = &cls_out * &model.head_w1;
    add_row_bias(&mut head_z1, &model.head_b1);
    let head_a1 = head_z1.map(gelu);
    let logit = (&head_a1 * &model.head_w2)[(0, 0)] + model.head_b2[(0, 0)];
    let prob = sigmoid(logit);

    Ok(ForwardCache {
        static_z,
        seq_len: l,
        embed_drop,
        blocks: block_caches,
        x_final: x,
        head_z1,
        head_a1,
        logit,
        prob,
    })
}

/// Per-row probabilities. Dropout is active only in train mode (the rng
/// seeds it); eval mode is pure.
pub fn forward(
    batch: &Batch,
    model: &FusionModel,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>, ModelError> {
    let mut probs = Vec::with_capacity(batch.len());
    for (i, ts) in batch.ts.iter().enumerate() {
        let static_row = DMatrix::from_fn(1, batch.statics.ncols(), |_, j| batch.statics[(i, j)]);
        let cache = forward_sample(ts, &static_row, model, rng.as_deref_mut())?;
        probs.push(cache.prob);
    }
    Ok(probs)
}

fn backward_sample(
    ts: &DMatrix<f64>,
    static_row: &DMatrix<f64>,
    model: &FusionModel,
    cache: &ForwardCache,
    dlogit: f64,
    grads: &mut FusionModel,
) {
    let cfg = &model.config;
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let l = cache.seq_len;

    // Head: logit = gelu(cls_out W1 + b1) W2 + b2.
    let dhead_a1 = model.head_w2.transpose() * dlogit; // 1 x head_dim
    grads.head_b2[(0, 0)] += dlogit;
    for j in 0..cfg.head_dim {
        grads.head_w2[(j, 0)] += cache.head_a1[(0, j)] * dlogit;
    }
    let dhead_z1 = DMatrix::from_fn(1, cfg.head_dim, |_, j| {
        dhead_a1[(0, j)] * gelu_grad(cache.head_z1[(0, j)])
    });
    let cls_out = DMatrix::from_fn(1, d, |_, j| cache.x_final[(0, j)]);
    grads.head_w1 += cls_out.transpose() * &dhead_z1;
    column_sums_into(&dhead_z1, &mut grads.head_b1);
    let dcls_out = &dhead_z1 * model.head_w1.transpose(); // 1 x d

    let mut dx = DMatrix::zeros(l, d);
    for j in 0..d {
        dx[(0, j)] = dcls_out[(0, j)];
    }

    // Blocks in reverse.
    for (bi, block) in model.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[bi];
        let gb = &mut grads.blocks[bi];

        // x_out = x_mid + drop(f); f = gelu(z1) W2 + b2; z1 = h2 W1 + b1.
        let df_dropped = dx.clone();
        let df = match &bc.ff_drop {
            Some(mask) => df_dropped.component_mul(mask),
            None => df_dropped,
        };
        gb.ff_w2 += bc.a1.transpose() * &df;
        column_sums_into(&df, &mut gb.ff_b2);
        let da1 = &df * block.ff_w2.transpose();
        let dz1 = DMatrix::from_fn(l, cfg.ff_dim, |i, j| da1[(i, j)] * gelu_grad(bc.z1[(i, j)]));
        gb.ff_w1 += bc.h2.transpose() * &dz1;
        column_sums_into(&dz1, &mut gb.ff_b1);
        let dh2 = &dz1 * block.ff_w1.transpose();

        let dx_mid_from_ln = layer_norm_backward(
            &dh2,
            &bc.ln2_xhat,
            &bc.ln2_inv_std,
            &block.ln2_g,
            &mut gb.ln2_g,
            &mut gb.ln2_b,
        );
        // Residual: dx_mid = dx (from x_out path) + LN2 path.
        let dx_mid = &dx + dx_mid_from_ln;

        // x_mid = x_in + drop(attn_proj).
        let dattn_dropped = dx_mid.clone();
        let dattn_proj = match &bc.attn_drop {
            Some(mask) => dattn_dropped.component_mul(mask),
            None => dattn_dropped,
        };
        gb.wo += bc.heads_out.transpose() * &dattn_proj;
        column_sums_into(&dattn_proj, &mut gb.bo);
        let dheads_out = &dattn_proj * block.wo.transpose();

        let mut dq = DMatrix::zeros(l, d);
        let mut dk = DMatrix::zeros(l, d);
        let mut dv = DMatrix::zeros(l, d);
        for h in 0..n_heads {
            let a = &bc.attn[h];
            let doh = dheads_out.columns(h * dh, dh);
            let vs = bc.v.columns(h * dh, dh);
            let qs = bc.q.columns(h * dh, dh);
            let ks = bc.k.columns(h * dh, dh);

            let da = &doh * vs.transpose(); // L x L
            dv.columns_mut(h * dh, dh)
                .copy_from(&(a.transpose() * &doh));

            // Softmax backward per row.
            let mut ds = DMatrix::zeros(l, l);
            for i in 0..l {
                let mut dot = 0.0;
                for j in 0..l {
                    dot += da[(i, j)] * a[(i, j)];
                }
                for j in 0..l {
                    ds[(i, j)] = a[(i, j)] * (da[(i, j)] - dot);
                }
            }
            ds *= scale;
            dq.columns_mut(h * dh, dh).copy_from(&(&ds * ks));
            dk.columns_mut(h * dh, dh)
                .copy_from(&(ds.transpose() * qs));
        }

        gb.wq += bc.h1.transpose() * &dq;
        column_sums_into(&dq, &mut gb.bq);
        gb.wk += bc.h1.transpose() * &dk;
        column_sums_into(&dk, &mut gb.bk);
        gb.wv += bc.h1.transpose() * &dv;
        column_sums_into(&dv, &mut gb.bv);
        let dh1 = &dq * block.wq.transpose() + &dk * block.wk.transpose() + &dv * block.wv.transpose();

        let dx_in_from_ln = layer_norm_backward(
            &dh1,
            &bc.ln1_xhat,
            &bc.ln1_inv_std,
            &block.ln1_g,
            &mut gb.ln1_g,
            &mut gb.ln1_b,
        );
        dx = dx_mid + dx_in_from_ln;
        let _ = &bc.x_in;
    }

    // Embedding dropout.
    let dseq = match &cache.embed_drop {
        Some(mask) => dx.component_mul(mask),
        None => dx,
    };

    // Positional embeddings: used rows only.
    for i in 0..l {
        for j in 0..d {
            grads.pos[(i, j)] += dseq[(i, j)];
        }
    }

    // CLS.
    for j in 0..d {
        grads.cls[(0, j)] += dseq[(0, j)];
    }

    let ts_offset = match cfg.mode {
        FusionMode::Multimodal => {
            // Static token path.
            let dst = DMatrix::from_fn(1, d, |_, j| dseq[(1, j)]);
            let z = cache.static_z.as_ref().expect("multimodal cache");
            let h = z.map(gelu);
            grads.static_w2 += h.transpose() * &dst;
            column_sums_into(&dst, &mut grads.static_b2);
            let dh_static = &dst * model.static_w2.transpose();
            let dz = DMatrix::from_fn(1, cfg.ff_dim, |_, j| {
                dh_static[(0, j)] * gelu_grad(z[(0, j)])
            });
            grads.static_w1 += static_row.transpose() * &dz;
            column_sums_into(&dz, &mut grads.static_b1);
            2
        }
        FusionMode::UnimodalTs => 1,
    };

    // Time-step input projection.
    let t_len = ts.nrows();
    let dx_ts = DMatrix::from_fn(t_len, d, |t, j| dseq[(ts_offset + t, j)]);
    grads.w_in += ts.transpose() * &dx_ts;
    column_sums_into(&dx_ts, &mut grads.b_in);
}

/// Mean binary cross-entropy and full analytic gradients. Probabilities
/// are clamped to [1e-7, 1-1e-7] before the log; clamped samples pass
/// no gradient. `pos_weight` rescales positive-sample terms (1.0 = plain
/// BCE). Dropout follows the rng argument as in `forward`.
pub fn loss_and_gradients(
    batch: &Batch,
    model: &FusionModel,
    pos_weight: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, FusionModel), ModelError> {
    let n = batch.len();
    assert!(n > 0, "empty batch");
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let static_row = DMatrix::from_fn(1, batch.statics.ncols(), |_, j| batch.statics[(i, j)]);
        let cache = forward_sample(&batch.ts[i], &static_row, model, rng.as_deref_mut())?;
        let y = if batch.labels[i] { 1.0 } else { 0.0 };
        let w = if batch.labels[i] { pos_weight } else { 1.0 };
        let p = cache.prob;
        let p_cl = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= w * (y * p_cl.ln() + (1.0 - y) * (1.0 - p_cl).ln()) * inv_n;
        let clamped = p < PROB_CLAMP || p > 1.0 - PROB_CLAMP;
        let dlogit = if clamped { 0.0 } else { w * (p - y) * inv_n };
        if dlogit != 0.0 {
            backward_sample(&batch.ts[i], &static_row, model, &cache, dlogit, &mut grads);
        }
        let _ = cache.logit;
    }
    Ok((loss, grads))
}

/// Per-sample gradient contribution, exposed for deterministic parallel
/// accumulation by the trainer.
pub(super) fn sample_loss_and_grad(
    ts: &DMatrix<f64>,
    static_row: &DMatrix<f64>,
    label: bool,
    model: &FusionModel,
    pos_weight: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, FusionModel), ModelError> {
    let cache = forward_sample(ts, static_row, model, rng.as_deref_mut())?;
    let y = if label { 1.0 } else { 0.0 };
    let w = if label { pos_weight } else { 1.0 };
    let p = cache.prob;
    let p_cl = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -w * (y * p_cl.ln() + (1.0 - y) * (1.0 - p_cl).ln());
    let mut grads = model.zeros_like();
    let clamped = p < PROB_CLAMP || p > 1.0 - PROB_CLAMP;
    if !clamped {
        backward_sample(ts, static_row, model, &cache, w * (p - y), &mut grads);
    }
    Ok((loss, grads))
}

/// Attention-row normalization check: returns the maximum |row sum - 1|
/// across all blocks and heads for the first sample of the batch.
#[cfg(test)]
fn max_attention_row_deviation(batch: &Batch, model: &FusionModel) -> Result<f64, ModelError> {
    let static_row = DMatrix::from_fn(1, batch.statics.ncols(), |_, j| batch.statics[(0, j)]);
    let cache = forward_sample(&batch.ts[0], &static_row, model, None)?;
    let mut worst = 0.0f64;
    for bc in &cache.blocks {
        for a in &bc.attn {
            for i in 0..a.nrows() {
                let s: f64 = (0..a.ncols()).map(|j| a[(i, j)]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn tiny_config(mode: FusionMode) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 1,
            ff_dim: 16,
            head_dim: 4,
            dropout_rate: 0.0,
            max_seq_len: 12,
            mode,
        }
    }

    fn random_batch(b: usize, t: usize, c: usize, s: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch {
            ts: (0..b)
                .map(|_| DMatrix::from_fn(t, c, |_, _| rng.gen_range(-1.0..1.0)))
                .collect(),
            statics: DMatrix::from_fn(b, s, |_, _| rng.gen_range(-1.0..1.0)),
            labels: (0..b).map(|i| i % 2 == 0).collect(),
        }
    }

    #[test]
    fn zero_weights_head_bias_gives_constant_probability() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let mut model = FusionModel::init(&cfg, 3, 5, 0).unwrap();
        for (_, t) in model.tensors_mut() {
            t.fill(0.0);
        }
        // LN gains back to 1 so the blocks stay well-defined.
        for b in &mut model.blocks {
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
        }
        model.head_b2[(0, 0)] = 0.7;
        let batch = random_batch(3, 6, 3, 5, 1);
        let probs = forward(&batch, &model, None).unwrap();
        for p in probs {
            assert_relative_eq!(p, sigmoid(0.7), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_weights_zero_inputs_tokens_equal_positional_embeddings() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let mut model = FusionModel::init(&cfg, 3, 5, 0).unwrap();
        for (_, t) in model.tensors_mut() {
            t.fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        model.pos = DMatrix::from_fn(cfg.max_seq_len, cfg.d_model, |_, _| rng.gen_range(-1.0..1.0));
        let ts = DMatrix::zeros(4, 3);
        let st = DMatrix::zeros(1, 5);
        let seq = assemble_sequence(&ts, &st, &model).unwrap();
        for i in 0..seq.nrows() {
            for j in 0..seq.ncols() {
                assert_eq!(seq[(i, j)], model.pos[(i, j)]);
            }
        }
    }

    #[test]
    fn unimodal_ignores_static_bitwise() {
        let cfg = tiny_config(FusionMode::UnimodalTs);
        let model = FusionModel::init(&cfg, 3, 5, 9).unwrap();
        let batch = random_batch(2, 6, 3, 5, 7);
        let mut perturbed = batch.clone();
        for v in perturbed.statics.iter_mut() {
            *v += 10.0;
        }
        let a = forward(&batch, &model, None).unwrap();
        let b = forward(&perturbed, &model, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn multimodal_static_enters_only_token_one() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let model = FusionModel::init(&cfg, 3, 5, 9).unwrap();
        let batch = random_batch(2, 6, 3, 5, 8);
        let ts = batch.ts[0].clone();
        let s0 = DMatrix::from_fn(1, 5, |_, j| batch.statics[(0, j)]);
        let s1 = DMatrix::from_fn(1, 5, |_, j| batch.statics[(1, j)]);
        let seq0 = assemble_sequence(&ts, &s0, &model).unwrap();
        let seq1 = assemble_sequence(&ts, &s1, &model).unwrap();
        for i in 0..seq0.nrows() {
            for j in 0..seq0.ncols() {
                if i == 1 {
                    continue;
                }
                assert_eq!(seq0[(i, j)].to_bits(), seq1[(i, j)].to_bits());
            }
        }
        assert_ne!(seq0.row(1), seq1.row(1));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let model = FusionModel::init(&cfg, 3, 5, 11).unwrap();
        let batch = random_batch(1, 8, 3, 5, 12);
        let dev = max_attention_row_deviation(&batch, &model).unwrap();
        assert!(dev < 1e-6, "max attention row deviation {dev}");
    }

    #[test]
    fn duplicate_rows_identical_probabilities() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let model = FusionModel::init(&cfg, 3, 5, 2).unwrap();
        let mut batch = random_batch(1, 6, 3, 5, 4);
        batch.ts.push(batch.ts[0].clone());
        batch.statics = DMatrix::from_fn(2, 5, |_, j| batch.statics[(0, j)]);
        batch.labels.push(batch.labels[0]);
        let probs = forward(&batch, &model, None).unwrap();
        assert_eq!(probs[0].to_bits(), probs[1].to_bits());
    }

    #[test]
    fn duplicated_batch_mean_loss_unchanged() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let model = FusionModel::init(&cfg, 3, 5, 2).unwrap();
        let batch = random_batch(3, 6, 3, 5, 4);
        let mut doubled = batch.clone();
        doubled.ts.extend(batch.ts.iter().cloned());
        doubled.statics = DMatrix::from_fn(6, 5, |i, j| batch.statics[(i % 3, j)]);
        doubled.labels.extend(batch.labels.iter().cloned());
        let (l1, _) = loss_and_gradients(&batch, &model, 1.0, None).unwrap();
        let (l2, _) = loss_and_gradients(&doubled, &model, 1.0, None).unwrap();
        assert_relative_eq!(l1, l2, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_multimodal() {
        gradient_check(FusionMode::Multimodal);
    }

    #[test]
    fn gradients_match_finite_differences_unimodal() {
        gradient_check(FusionMode::UnimodalTs);
    }

    fn gradient_check(mode: FusionMode) {
        let cfg = tiny_config(mode);
        let model = FusionModel::init(&cfg, 3, 5, 21).unwrap();
        let batch = random_batch(2, 6, 3, 5, 22);
        let (_, grads) = loss_and_gradients(&batch, &model, 1.0, None).unwrap();

        let flat = model.to_flat();
        let gflat = grads.to_flat();
        let mut probe = model.clone();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        // A deterministic stride keeps the test fast while touching all
        // tensors (the acceptance suite checks every coordinate).
        for idx in (0..flat.len()).step_by(7) {
            let mut up = flat.clone();
            up[idx] += eps;
            probe.from_flat(&up);
            let (lp, _) = loss_and_gradients(&batch, &probe, 1.0, None).unwrap();
            let mut dn = flat.clone();
            dn[idx] -= eps;
            probe.from_flat(&dn);
            let (lm, _) = loss_and_gradients(&batch, &probe, 1.0, None).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (gflat[idx] - fd).abs() / gflat[idx].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn positional_permutation_changes_output() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let model = FusionModel::init(&cfg, 3, 5, 30).unwrap();
        let batch = random_batch(1, 6, 3, 5, 31);
        let base = forward(&batch, &model, None).unwrap()[0];
        // Swap two time steps.
        let mut permuted = batch.clone();
        let row_a: Vec<f64> = permuted.ts[0].row(0).iter().copied().collect();
        let row_b: Vec<f64> = permuted.ts[0].row(5).iter().copied().collect();
        for (j, v) in row_b.iter().enumerate() {
            permuted.ts[0][(0, j)] = *v;
        }
        for (j, v) in row_a.iter().enumerate() {
            permuted.ts[0][(5, j)] = *v;
        }
        let swapped = forward(&permuted, &model, None).unwrap()[0];
        assert_ne!(base.to_bits(), swapped.to_bits());
    }

    #[test]
    fn sequence_too_long_is_config_error() {
        let cfg = tiny_config(FusionMode::Multimodal);
        let model = FusionModel::init(&cfg, 3, 5, 1).unwrap();
        let ts = DMatrix::zeros(20, 3);
        let st = DMatrix::zeros(1, 5);
        assert!(matches!(
            assemble_sequence(&ts, &st, &model),
            Err(ModelError::Config(_))
        ));
    }
}
