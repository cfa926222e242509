//! Hand-derived backward pass.
//!
//! Given the trace of a training-mode forward pass and the loss gradient at
//! the logits, computes the gradient of the loss with respect to every
//! parameter (accumulated over batch items) and to the batch input values.
//! Checked against central finite differences in the test suite.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};

use super::forward::{ForwardTrace, ItemTrace, LayerTrace, LnTrace};
use super::{LayerSlots, ModelError, ModelParameters, TensorSpec};

/// Loss gradients, laid out exactly like [`ModelParameters::data`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub data: Vec<f64>,
    /// Gradient w.r.t. the batch values, shaped `(batch, input_dim, t_max)`.
    /// Padded positions are exactly zero.
    pub input: Array3<f64>,
}

fn add_into(buf: &mut [f64], spec: &TensorSpec, values: impl IntoIterator<Item = f64>) {
    let slot = &mut buf[spec.range()];
    for (s, v) in slot.iter_mut().zip(values) {
        *s += v;
    }
}

/// dL/dx of LayerNorm given dL/dy; also returns the scale/shift gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    ln: &LnTrace,
    gamma: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let (n, d) = dy.dim();
    let d_f = d as f64;
    let dgamma = (dy * &ln.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));

    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxhat = dy[(i, j)] * gamma[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * ln.xhat[(i, j)];
        }
        mean_dxhat /= d_f;
        mean_dxhat_xhat /= d_f;
        for j in 0..d {
            let dxhat = dy[(i, j)] * gamma[j];
            dx[(i, j)] = ln.inv_std[i] * (dxhat - mean_dxhat - ln.xhat[(i, j)] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax backward per row: `ds = a ∘ (da - <da, a>)`.
fn softmax_backward(attn: &Array2<f64>, mut da: Array2<f64>) -> Array2<f64> {
    for (mut da_row, a_row) in da.rows_mut().into_iter().zip(attn.rows()) {
        let dot: f64 = da_row.iter().zip(a_row.iter()).map(|(g, a)| g * a).sum();
        for (g, a) in da_row.iter_mut().zip(a_row.iter()) {
            *g = a * (*g - dot);
        }
    }
    da
}

fn layer_backward(
    params: &ModelParameters,
    slots: &LayerSlots,
    lt: &LayerTrace,
    d_out: Array2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let layout = &params.layout;
    let data = &params.data;
    let hp = &params.hp;
    let len = lt.h_in.nrows();
    let d = hp.d_model;
    let head_dim = hp.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();

    // LayerNorm after the feed-forward block.
    let (dr2, dg2, db2) =
        layer_norm_backward(&d_out, &lt.ln_ffn, layout.vec(data, slots.ln_ffn_scale));
    add_into(grads, layout.spec(slots.ln_ffn_scale), dg2);
    add_into(grads, layout.spec(slots.ln_ffn_shift), db2);

    // r2 = n1 + f2.
    let mut dn1 = dr2.clone();
    let df2 = dr2;

    // f2 = a1 · w_project + b_project.
    add_into(
        grads,
        layout.spec(slots.w_project),
        lt.a1.t().dot(&df2),
    );
    add_into(grads, layout.spec(slots.b_project), df2.sum_axis(Axis(0)));
    let mut dz1 = df2.dot(&layout.mat(data, slots.w_project).t());

    // a1 = dropout(relu(z1)).
    if let Some(mask) = &lt.ffn_drop {
        dz1 *= mask;
    }
    dz1.zip_mut_with(&lt.z1, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });

    // z1 = n1 · w_expand + b_expand.
    add_into(
        grads,
        layout.spec(slots.w_expand),
        lt.n1.t().dot(&dz1),
    );
    add_into(grads, layout.spec(slots.b_expand), dz1.sum_axis(Axis(0)));
    dn1 += &dz1.dot(&layout.mat(data, slots.w_expand).t());

    // LayerNorm after attention.
    let (dr1, dg1, db1) =
        layer_norm_backward(&dn1, &lt.ln_attn, layout.vec(data, slots.ln_attn_scale));
    add_into(grads, layout.spec(slots.ln_attn_scale), dg1);
    add_into(grads, layout.spec(slots.ln_attn_shift), db1);

    // r1 = h_in + dropout(mha_out).
    let mut dh_in = dr1.clone();
    let mut d_mha = dr1;
    if let Some(mask) = &lt.mha_drop {
        d_mha *= mask;
    }

    // mha_out = ctx · wo + bo.
    add_into(
        grads,
        layout.spec(slots.wo),
        lt.ctx.t().dot(&d_mha),
    );
    add_into(grads, layout.spec(slots.bo), d_mha.sum_axis(Axis(0)));
    let dctx = d_mha.dot(&layout.mat(data, slots.wo).t());

    // Attention heads.
    let mut dq = Array2::zeros((len, d));
    let mut dk = Array2::zeros((len, d));
    let mut dv = Array2::zeros((len, d));
    for head in 0..hp.n_heads {
        let cols = head * head_dim..(head + 1) * head_dim;
        let attn = &lt.attn[head];
        let vh = lt.v.slice(s![.., cols.clone()]);
        let qh = lt.q.slice(s![.., cols.clone()]);
        let kh = lt.k.slice(s![.., cols.clone()]);
        let dctx_h = dctx.slice(s![.., cols.clone()]);

        // ctx_h = (attn ∘ drop_mask) · v_h.
        let mut da = dctx_h.dot(&vh.t());
        let dropped_attn = match lt.attn_drop.as_ref() {
            Some(masks) => {
                da *= &masks[head];
                attn * &masks[head]
            }
            None => attn.clone(),
        };
        dv.slice_mut(s![.., cols.clone()])
            .assign(&dropped_attn.t().dot(&dctx_h));

        let mut ds = softmax_backward(attn, da);
        ds.mapv_inplace(|v| v * scale);
        dq.slice_mut(s![.., cols.clone()]).assign(&ds.dot(&kh));
        dk.slice_mut(s![.., cols]).assign(&ds.t().dot(&qh));
    }

    // q/k/v projections from h_in.
    for (w_slot, b_slot, dmat) in [
        (slots.wq, slots.bq, &dq),
        (slots.wk, slots.bk, &dk),
        (slots.wv, slots.bv, &dv),
    ] {
        add_into(
            grads,
            layout.spec(w_slot),
            lt.h_in.t().dot(dmat),
        );
        add_into(grads, layout.spec(b_slot), dmat.sum_axis(Axis(0)));
        dh_in += &dmat.dot(&layout.mat(data, w_slot).t());
    }

    dh_in
}

fn item_backward(
    params: &ModelParameters,
    item: &ItemTrace,
    dlogits_row: ArrayView1<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let layout = &params.layout;
    let data = &params.data;

    // logits = pooled · head_w + head_b.
    let head_w_spec = layout.spec(layout.head_w);
    {
        let cols = head_w_spec.shape[1];
        let slot = &mut grads[head_w_spec.range()];
        for (r, &p) in item.pooled.iter().enumerate() {
            for (c, &g) in dlogits_row.iter().enumerate() {
                slot[r * cols + c] += p * g;
            }
        }
    }
    add_into(grads, layout.spec(layout.head_b), dlogits_row.iter().copied());
    let dpooled = layout.mat(data, layout.head_w).dot(&dlogits_row);

    // pooled = mean over real positions of h_final.
    let len = item.len;
    let mut dh = Array2::zeros((len, params.hp.d_model));
    let per_row = dpooled.mapv(|v| v / len as f64);
    for mut row in dh.rows_mut() {
        row += &per_row;
    }

    for (lt, slots) in item.layers.iter().zip(&layout.layers).rev() {
        dh = layer_backward(params, slots, lt, dh, grads);
    }

    // h0 = x · embed_w + embed_b + positional encoding.
    add_into(
        grads,
        layout.spec(layout.embed_w),
        item.x.t().dot(&dh),
    );
    add_into(grads, layout.spec(layout.embed_b), dh.sum_axis(Axis(0)));
    dh.dot(&layout.mat(data, layout.embed_w).t())
}

/// Accumulates parameter and input gradients over a traced batch.
pub fn backward(
    params: &ModelParameters,
    trace: &ForwardTrace,
    dlogits: &Array2<f64>,
) -> Result<Gradients, ModelError> {
    if dlogits.nrows() != trace.items.len() || dlogits.ncols() != params.hp.n_classes {
        return Err(ModelError::ShapeMismatch(format!(
            "dlogits is {}×{}, trace carries {} items with {} classes",
            dlogits.nrows(),
            dlogits.ncols(),
            trace.items.len(),
            params.hp.n_classes
        )));
    }
    for item in &trace.items {
        if item.layers.len() != params.hp.n_layers {
            return Err(ModelError::ShapeMismatch(
                "trace depth does not match the model".into(),
            ));
        }
    }

    let mut grads = vec![0.0; params.len()];
    let mut input = Array3::zeros((trace.items.len(), params.hp.input_dim, trace.t_max));
    for (i, item) in trace.items.iter().enumerate() {
        let dx = item_backward(params, item, dlogits.row(i), &mut grads);
        input.slice_mut(s![i, .., ..item.len]).assign(&dx.t());
    }
    Ok(Gradients { data: grads, input })
}
