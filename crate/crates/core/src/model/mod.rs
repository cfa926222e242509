//! The sequence classifier: a compact Transformer-style encoder.
//!
//! Architecture: linear input embedding, additive sinusoidal position
//! encoding, a stack of post-norm encoder layers (multi-head self-attention
//! over the real positions, residual, LayerNorm, position-wise feed-forward,
//! residual, LayerNorm), global average pooling over real positions, and a
//! linear class head. All arithmetic is 64-bit and hand-written — forward,
//! backward and the optimizer — so the gradient path is fully auditable.
//!
//! Parameters live in one flat `Vec<f64>` described by a [`Layout`] of named
//! tensors in a fixed canonical order; views are carved out of the flat
//! buffer on demand. That makes the parameter count, optimizer sweeps,
//! finite-difference probes and checkpoints all trivially consistent.

mod backward;
mod checkpoint;
mod forward;
mod optimizer;

pub use backward::{backward, Gradients};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use forward::{forward, DropoutMode, ForwardTrace};
pub use optimizer::AdamW;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

use crate::seeds;

/// Epsilon inside the LayerNorm standard deviation.
pub const LN_EPSILON: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embedding width {d_model} is not divisible by head count {n_heads}")]
    IncompatibleHeads { d_model: usize, n_heads: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Architecture knobs. The defaults are the selected configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    /// Dropout rate applied (in training mode) to attention probabilities,
    /// to the attention block output, and after the feed-forward activation.
    pub dropout: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            input_dim: 2,
            d_model: 4,
            n_heads: 4,
            ffn_hidden: 32,
            n_layers: 3,
            n_classes: 2,
            dropout: 0.1,
        }
    }
}

impl HyperParams {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::IncompatibleHeads {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        Ok(())
    }
}

/// One named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    /// `[rows, cols]` for matrices, `[len]` for vectors. Matrices are stored
    /// row-major.
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Whether the tensor takes part in decoupled weight decay. Only weight
    /// matrices do; biases and LayerNorm parameters are exempt.
    pub decayed: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Spec indices of one encoder layer's tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerSlots {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln_attn_scale: usize,
    pub ln_attn_shift: usize,
    pub w_expand: usize,
    pub b_expand: usize,
    pub w_project: usize,
    pub b_project: usize,
    pub ln_ffn_scale: usize,
    pub ln_ffn_shift: usize,
}

/// Canonical tensor ordering for a given architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
    pub(crate) embed_w: usize,
    pub(crate) embed_b: usize,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
}

impl Layout {
    pub fn new(hp: &HyperParams) -> Result<Self, ModelError> {
        hp.validate()?;
        let d = hp.d_model;
        let mut specs: Vec<TensorSpec> = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>, decayed: bool| -> usize {
            let len: usize = shape.iter().product();
            specs.push(TensorSpec { name, shape, offset, decayed });
            offset += len;
            specs.len() - 1
        };

        let embed_w = push("embed.weight".into(), vec![hp.input_dim, d], true);
        let embed_b = push("embed.bias".into(), vec![d], false);

        let mut layers = Vec::with_capacity(hp.n_layers);
        for l in 0..hp.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerSlots {
                wq: push(p("attn.query.weight"), vec![d, d], true),
                bq: push(p("attn.query.bias"), vec![d], false),
                wk: push(p("attn.key.weight"), vec![d, d], true),
                bk: push(p("attn.key.bias"), vec![d], false),
                wv: push(p("attn.value.weight"), vec![d, d], true),
                bv: push(p("attn.value.bias"), vec![d], false),
                wo: push(p("attn.output.weight"), vec![d, d], true),
                bo: push(p("attn.output.bias"), vec![d], false),
                ln_attn_scale: push(p("norm_attn.scale"), vec![d], false),
                ln_attn_shift: push(p("norm_attn.shift"), vec![d], false),
                w_expand: push(p("ffn.expand.weight"), vec![d, hp.ffn_hidden], true),
                b_expand: push(p("ffn.expand.bias"), vec![hp.ffn_hidden], false),
                w_project: push(p("ffn.project.weight"), vec![hp.ffn_hidden, d], true),
                b_project: push(p("ffn.project.bias"), vec![d], false),
                ln_ffn_scale: push(p("norm_ffn.scale"), vec![d], false),
                ln_ffn_shift: push(p("norm_ffn.shift"), vec![d], false),
            });
        }

        let head_w = push("head.weight".into(), vec![d, hp.n_classes], true);
        let head_b = push("head.bias".into(), vec![hp.n_classes], false);

        Ok(Self { specs, total: offset, embed_w, embed_b, layers, head_w, head_b })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub(crate) fn spec(&self, idx: usize) -> &TensorSpec {
        &self.specs[idx]
    }

    pub(crate) fn mat<'a>(&self, data: &'a [f64], idx: usize) -> ArrayView2<'a, f64> {
        let spec = &self.specs[idx];
        debug_assert_eq!(spec.shape.len(), 2);
        ArrayView2::from_shape((spec.shape[0], spec.shape[1]), &data[spec.range()])
            .expect("layout range matches shape")
    }

    pub(crate) fn vec<'a>(&self, data: &'a [f64], idx: usize) -> ArrayView1<'a, f64> {
        let spec = &self.specs[idx];
        debug_assert_eq!(spec.shape.len(), 1);
        ArrayView1::from(&data[spec.range()])
    }
}

/// Number of learnable parameters for an architecture.
pub fn param_count(hp: &HyperParams) -> Result<usize, ModelError> {
    Ok(Layout::new(hp)?.total_len())
}

/// Model parameters in one flat buffer plus the layout describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub hp: HyperParams,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParameters {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Initializes a model deterministically from a seed.
///
/// Weight matrices are drawn uniformly from `±sqrt(1 / fan_in)` in canonical
/// layout order; biases start at zero, LayerNorm scales at one and shifts at
/// zero.
pub fn init_model(hp: &HyperParams, seed: u64) -> Result<ModelParameters, ModelError> {
    let layout = Layout::new(hp)?;
    let mut data = vec![0.0; layout.total_len()];
    let mut rng = seeds::rng_from(seed, &[]);

    for spec in layout.specs() {
        let slot = &mut data[spec.range()];
        if spec.shape.len() == 2 {
            let bound = (1.0 / spec.shape[0] as f64).sqrt();
            for v in slot.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        } else if spec.name.ends_with("scale") {
            slot.fill(1.0);
        }
        // Biases and LayerNorm shifts stay zero.
    }

    Ok(ModelParameters { hp: *hp, layout, data })
}
