//! Forward pass. In training mode it records per-item traces carrying every
//! intermediate the hand-written backward pass needs.
//!
//! Batch items are processed on their real positions only (the padding mask
//! is a right-pad prefix mask, so item `i` is just its first `lengths[i]`
//! columns). Padded positions therefore cannot influence logits, attention
//! rows, pooling, or gradients — the masking guarantee holds exactly.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, RngCore};

use super::{HyperParams, LayerSlots, ModelError, ModelParameters, LN_EPSILON};
use crate::features::Batch;

/// Whether dropout is active and where its randomness comes from.
pub enum DropoutMode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone)]
pub(crate) struct LnTrace {
    /// Normalized activations `(x - mean) / std`, shape `(len, d)`.
    pub xhat: Array2<f64>,
    /// `1 / std` per position.
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub h_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Post-softmax attention, one `(len, len)` matrix per head.
    pub attn: Vec<Array2<f64>>,
    /// Multiplicative dropout masks on attention probabilities (0 or 1/keep).
    pub attn_drop: Option<Vec<Array2<f64>>>,
    /// Concatenated per-head context (after attention dropout).
    pub ctx: Array2<f64>,
    pub mha_drop: Option<Array2<f64>>,
    pub ln_attn: LnTrace,
    /// LayerNorm output feeding the feed-forward block.
    pub n1: Array2<f64>,
    /// Feed-forward pre-activation.
    pub z1: Array2<f64>,
    /// ReLU output with dropout applied.
    pub a1: Array2<f64>,
    pub ffn_drop: Option<Array2<f64>>,
    pub ln_ffn: LnTrace,
}

#[derive(Debug, Clone)]
pub(crate) struct ItemTrace {
    pub len: usize,
    /// Input slice `(len, input_dim)`.
    pub x: Array2<f64>,
    pub layers: Vec<LayerTrace>,
    /// Mean of the final layer's output over real positions.
    pub pooled: Array1<f64>,
}

/// Intermediates recorded by a training-mode forward pass.
pub struct ForwardTrace {
    pub(crate) items: Vec<ItemTrace>,
    pub(crate) t_max: usize,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.items.len()
    }
}

/// Sinusoidal position encoding table, `(t_len, d)`.
pub fn positional_encoding(t_len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((t_len, d));
    for pos in 0..t_len {
        for j in 0..d {
            let exponent = (j - j % 2) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            pe[(pos, j)] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multiplicative inverted-dropout mask: 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`. Entries are drawn row-major.
fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Array2<f64> {
    let keep = 1.0 - rate;
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let drop = rng.gen::<f64>() < rate;
        values.push(if drop { 0.0 } else { 1.0 / keep });
    }
    Array2::from_shape_vec((rows, cols), values).expect("mask shape")
}

fn layer_norm(x: &Array2<f64>, scale: ndarray::ArrayView1<f64>, shift: ndarray::ArrayView1<f64>) -> (Array2<f64>, LnTrace) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPSILON).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            xhat[(i, j)] = (x[(i, j)] - mean) * inv;
        }
    }
    let y = &xhat * &scale + &shift;
    (y, LnTrace { xhat, inv_std })
}

struct LayerStep {
    out: Array2<f64>,
    trace: LayerTrace,
}

#[allow(clippy::too_many_arguments)]
fn layer_forward(
    params: &ModelParameters,
    slots: &LayerSlots,
    h: Array2<f64>,
    rate: f64,
    rng: &mut Option<&mut dyn RngCore>,
    hp: &HyperParams,
) -> LayerStep {
    let layout = &params.layout;
    let data = &params.data;
    let len = h.nrows();
    let d = hp.d_model;
    let n_heads = hp.n_heads;
    let head_dim = hp.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();
    let dropping = rate > 0.0;

    let q = h.dot(&layout.mat(data, slots.wq)) + &layout.vec(data, slots.bq);
    let k = h.dot(&layout.mat(data, slots.wk)) + &layout.vec(data, slots.bk);
    let v = h.dot(&layout.mat(data, slots.wv)) + &layout.vec(data, slots.bv);

    let mut attn = Vec::with_capacity(n_heads);
    let mut attn_drop = if dropping { Some(Vec::with_capacity(n_heads)) } else { None };
    let mut ctx = Array2::zeros((len, d));
    for head in 0..n_heads {
        let cols = head * head_dim..(head + 1) * head_dim;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|s| s * scale);
        softmax_rows(&mut scores);
        if dropping {
            let rng = rng.as_deref_mut().expect("training rng");
            let mask = dropout_mask(len, len, rate, rng);
            let dropped = &scores * &mask;
            ctx.slice_mut(s![.., cols]).assign(&dropped.dot(&vh));
            attn_drop.as_mut().expect("mask store").push(mask);
        } else {
            ctx.slice_mut(s![.., cols]).assign(&scores.dot(&vh));
        }
        attn.push(scores);
    }

    let mha_out = ctx.dot(&layout.mat(data, slots.wo)) + &layout.vec(data, slots.bo);
    let (mha_drop, mha_dropped) = if dropping {
        let rng = rng.as_deref_mut().expect("training rng");
        let mask = dropout_mask(len, d, rate, rng);
        let dropped = &mha_out * &mask;
        (Some(mask), dropped)
    } else {
        (None, mha_out)
    };

    let r1 = &h + &mha_dropped;
    let (n1, ln_attn) = layer_norm(
        &r1,
        layout.vec(data, slots.ln_attn_scale),
        layout.vec(data, slots.ln_attn_shift),
    );

    let z1 = n1.dot(&layout.mat(data, slots.w_expand)) + &layout.vec(data, slots.b_expand);
    let relu = z1.mapv(|v| v.max(0.0));
    let (ffn_drop, a1) = if dropping {
        let rng = rng.as_deref_mut().expect("training rng");
        let mask = dropout_mask(len, hp.ffn_hidden, rate, rng);
        let dropped = &relu * &mask;
        (Some(mask), dropped)
    } else {
        (None, relu)
    };

    let f2 = a1.dot(&layout.mat(data, slots.w_project)) + &layout.vec(data, slots.b_project);
    let r2 = &n1 + &f2;
    let (out, ln_ffn) = layer_norm(
        &r2,
        layout.vec(data, slots.ln_ffn_scale),
        layout.vec(data, slots.ln_ffn_shift),
    );

    LayerStep {
        out,
        trace: LayerTrace {
            h_in: h,
            q,
            k,
            v,
            attn,
            attn_drop,
            ctx,
            mha_drop,
            ln_attn,
            n1,
            z1,
            a1,
            ffn_drop,
            ln_ffn,
        },
    }
}

/// Runs the classifier over a padded batch.
///
/// Returns one logit row per item, and — in training mode — the trace
/// required by [`super::backward`]. Dropout randomness is consumed item by
/// item in batch order, layer by layer within an item; with a dropout rate
/// of zero no randomness is consumed at all.
pub fn forward(
    params: &ModelParameters,
    batch: &Batch,
    mode: DropoutMode<'_>,
) -> Result<(Array2<f64>, Option<ForwardTrace>), ModelError> {
    let hp = &params.hp;
    let shape = batch.values.shape();
    if shape[1] != hp.input_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "batch carries {} features, model expects {}",
            shape[1], hp.input_dim
        )));
    }
    let t_max = shape[2];
    for (i, &len) in batch.lengths.iter().enumerate() {
        if len == 0 || len > t_max {
            return Err(ModelError::ShapeMismatch(format!(
                "item {i} has length {len}, batch width is {t_max}"
            )));
        }
        debug_assert!(
            (0..t_max).all(|t| batch.mask[(i, t)] == (t < len)),
            "padding mask must be a prefix mask"
        );
    }

    let (rate, mut rng): (f64, Option<&mut dyn RngCore>) = match mode {
        DropoutMode::Eval => (0.0, None),
        DropoutMode::Train(r) => (hp.dropout, Some(r)),
    };
    let collect_trace = rng.is_some();

    let pe = positional_encoding(t_max, hp.d_model);
    let layout = &params.layout;
    let data = &params.data;
    let we = layout.mat(data, layout.embed_w);
    let be = layout.vec(data, layout.embed_b);
    let wc = layout.mat(data, layout.head_w);
    let bc = layout.vec(data, layout.head_b);

    let mut logits = Array2::zeros((batch.len(), hp.n_classes));
    let mut items = Vec::with_capacity(if collect_trace { batch.len() } else { 0 });

    for i in 0..batch.len() {
        let len = batch.lengths[i];
        let x = batch.values.slice(s![i, .., ..len]).t().to_owned();
        let mut h = x.dot(&we) + &be;
        h += &pe.slice(s![..len, ..]);

        let mut layer_traces = Vec::with_capacity(hp.n_layers);
        for slots in &layout.layers {
            let step = layer_forward(params, slots, h, rate, &mut rng, hp);
            h = step.out;
            if collect_trace {
                layer_traces.push(step.trace);
            }
        }

        let pooled = h.mean_axis(Axis(0)).expect("non-empty sequence");
        let row = pooled.dot(&wc) + &bc;
        logits.row_mut(i).assign(&row);

        if collect_trace {
            items.push(ItemTrace { len, x, layers: layer_traces, pooled });
        }
    }

    let trace = if collect_trace {
        Some(ForwardTrace { items, t_max })
    } else {
        None
    };
    Ok((logits, trace))
}
