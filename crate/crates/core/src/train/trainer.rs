//! The training loop: stratified patient-level validation holdout, shuffled
//! mini-batches, per-class weighted cross-entropy, AdamW, learning-rate
//! annealing, and early stopping returning the best-validation-epoch weights.

use std::collections::HashSet;

use rand::seq::SliceRandom as _;

use super::loss::{class_weights, weighted_cross_entropy};
use super::stopper::EarlyStopper;
use super::{TrainError, TAG_EPOCH, TAG_INIT, TAG_VAL_SPLIT};
use crate::features::{collate, FeatureSequence};
use crate::model::{backward, forward, init_model, AdamW, DropoutMode, HyperParams, ModelParameters};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub anneal_factor: f64,
    pub anneal_patience: usize,
    pub val_fraction: f64,
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            lr: 0.001306,
            weight_decay: 0.01,
            batch_size: 64,
            max_epochs: 500,
            early_stop_patience: 20,
            anneal_factor: 5.0,
            anneal_patience: 10,
            val_fraction: 0.10,
            class_weighting: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.early_stop_patience < 1 || self.anneal_patience < 1 {
            return Err(TrainError::InvalidConfig("patience values must be >= 1".into()));
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return Err(TrainError::InvalidConfig(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) || self.anneal_factor <= 1.0 {
            return Err(TrainError::InvalidConfig(
                "lr must be positive and anneal_factor > 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch (not the last one).
    pub params: ModelParameters,
    /// 1-based epoch whose weights are returned; 0 if no epoch improved on
    /// the initial weights (e.g. the loss diverged immediately).
    pub best_epoch: usize,
    /// Last epoch that actually ran.
    pub stopped_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train_patients: Vec<String>,
    pub val_patients: Vec<String>,
}

/// Stratified patient-level holdout: roughly `fraction` of each class's
/// patients, at least one per class where possible, never a whole class.
fn validation_split(
    dataset: &[FeatureSequence],
    fraction: f64,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut by_class: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut seen = HashSet::new();
    for seq in dataset {
        if seen.insert(seq.patient_id.as_str()) {
            by_class[seq.dropout as usize].push(seq.patient_id.clone());
        }
    }
    let mut rng = seeds::rng_from(seed, &[TAG_VAL_SPLIT]);
    let (mut train_ids, mut val_ids) = (Vec::new(), Vec::new());
    for ids in &mut by_class {
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_val = if n < 2 {
            0
        } else {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        };
        val_ids.extend(ids.drain(..n_val));
        train_ids.extend(ids.drain(..));
    }
    (train_ids, val_ids)
}

/// Weighted cross-entropy over `seqs` in eval mode, aggregated exactly.
fn weighted_loss_over(
    params: &ModelParameters,
    seqs: &[&FeatureSequence],
    weights: [f64; 2],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let (mut num, mut den) = (0.0, 0.0);
    for chunk in seqs.chunks(batch_size) {
        let batch = collate(chunk);
        let (logits, _) = forward(params, &batch, DropoutMode::Eval)?;
        let (loss, _, wsum) = weighted_cross_entropy(&logits, &batch.labels, weights);
        num += loss * wsum;
        den += wsum;
    }
    Ok(num / den)
}

pub fn train(dataset: &[FeatureSequence], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if dataset.iter().all(|s| s.dropout) || dataset.iter().all(|s| !s.dropout) {
        return Err(TrainError::SingleClassTraining);
    }

    let (train_patients, val_patients) =
        validation_split(dataset, config.val_fraction, config.seed);
    let train_set: HashSet<&str> = train_patients.iter().map(String::as_str).collect();
    let val_set: HashSet<&str> = val_patients.iter().map(String::as_str).collect();
    let train_seqs: Vec<&FeatureSequence> = dataset
        .iter()
        .filter(|s| train_set.contains(s.patient_id.as_str()))
        .collect();
    let mut val_seqs: Vec<&FeatureSequence> = dataset
        .iter()
        .filter(|s| val_set.contains(s.patient_id.as_str()))
        .collect();
    if val_seqs.is_empty() {
        // Degenerate cohort (one patient per class): validate on the
        // training sequences rather than nothing.
        val_seqs = train_seqs.clone();
    }

    let weights = if config.class_weighting {
        class_weights(train_seqs.iter().map(|s| s.dropout as usize))?
    } else {
        [1.0, 1.0]
    };

    let mut params = init_model(&config.hp, seeds::derive_seed(config.seed, &[TAG_INIT]))?;
    let mut opt = AdamW::new(config.lr, config.weight_decay, params.len());
    let mut stopper = EarlyStopper::new(config.early_stop_patience, config.anneal_patience);
    let mut best_data = params.data.clone();
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut stopped_epoch = 0;

    let mut indices: Vec<usize> = (0..train_seqs.len()).collect();
    for epoch in 1..=config.max_epochs {
        stopped_epoch = epoch;
        // One stream per epoch drives the shuffle and then every dropout
        // mask, keeping the whole epoch reproducible in isolation.
        let mut rng = seeds::rng_from(config.seed, &[TAG_EPOCH, epoch as u64]);
        indices.shuffle(&mut rng);

        let (mut num, mut den) = (0.0, 0.0);
        for chunk in indices.chunks(config.batch_size) {
            let refs: Vec<&FeatureSequence> = chunk.iter().map(|&i| train_seqs[i]).collect();
            let batch = collate(&refs);
            let (logits, trace) = forward(&params, &batch, DropoutMode::Train(&mut rng))?;
            let trace = trace.expect("training mode always collects a trace");
            let (loss, dlogits, wsum) = weighted_cross_entropy(&logits, &batch.labels, weights);
            let grads = backward(&params, &trace, &dlogits)?;
            opt.step(&mut params, &grads)?;
            num += loss * wsum;
            den += wsum;
        }
        train_loss.push(num / den);

        let v = weighted_loss_over(&params, &val_seqs, weights, config.batch_size)?;
        val_loss.push(v);
        let decision = stopper.observe(epoch, v);
        if decision.improved {
            best_data.copy_from_slice(&params.data);
        }
        if decision.anneal {
            opt.lr /= config.anneal_factor;
        }
        if decision.stop {
            break;
        }
    }

    params.data = best_data;
    Ok(TrainOutcome {
        params,
        best_epoch: stopper.best_epoch(),
        stopped_epoch,
        train_loss,
        val_loss,
        train_patients,
        val_patients,
    })
}
