//! Versioned JSON checkpoints.
//!
//! A checkpoint bundles everything needed to score new data: architecture,
//! the feature scaler fitted on the training fold, and every parameter
//! tensor by name. Values round-trip bit-exactly (shortest-round-trip float
//! formatting on write, exact parse on read). Keys appear in declaration
//! order: `format_version`, `hyper_params`, `scaler`, then `parameters` in
//! canonical layout order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{HyperParams, Layout, ModelError, ModelParameters};
use crate::features::Scaler;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}, expected {CHECKPOINT_VERSION}")]
    UnsupportedVersion(u32),
    #[error("invalid architecture: {0}")]
    Model(#[from] ModelError),
    #[error("tensor {index}: expected `{expected}`, found `{found}`")]
    TensorMismatch { index: usize, expected: String, found: String },
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor `{name}`: expected {expected} values, found {found}")]
    LengthMismatch { name: String, expected: usize, found: usize },
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyper_params: HyperParams,
    pub scaler: Scaler,
    pub parameters: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(params: &ModelParameters, scaler: &Scaler) -> Self {
        let parameters = params
            .layout
            .specs()
            .iter()
            .map(|spec| NamedTensor {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                values: params.data[spec.range()].to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            hyper_params: params.hp,
            scaler: scaler.clone(),
            parameters,
        }
    }

    /// Validates names, shapes and sizes against the declared architecture
    /// and reassembles the flat parameter buffer.
    pub fn into_model(self) -> Result<(ModelParameters, Scaler), CheckpointError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(self.format_version));
        }
        let layout = Layout::new(&self.hyper_params)?;
        if self.parameters.len() != layout.specs().len() {
            return Err(CheckpointError::TensorCount {
                expected: layout.specs().len(),
                found: self.parameters.len(),
            });
        }
        let mut data = vec![0.0; layout.total_len()];
        for (index, (spec, tensor)) in
            layout.specs().iter().zip(&self.parameters).enumerate()
        {
            if tensor.name != spec.name {
                return Err(CheckpointError::TensorMismatch {
                    index,
                    expected: spec.name.clone(),
                    found: tensor.name.clone(),
                });
            }
            if tensor.shape != spec.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: tensor.shape.clone(),
                });
            }
            if tensor.values.len() != spec.len() {
                return Err(CheckpointError::LengthMismatch {
                    name: spec.name.clone(),
                    expected: spec.len(),
                    found: tensor.values.len(),
                });
            }
            data[spec.range()].copy_from_slice(&tensor.values);
        }
        let params = ModelParameters { hp: self.hyper_params, layout, data };
        Ok((params, self.scaler))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }
}
