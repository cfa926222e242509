//! Repeated k-fold cross-validation over patients, with an optional
//! exploration cohort that joins every training set but is never tested.
//!
//! Each (run, fold) job is independent: it refits the feature scaler on its
//! own training patients, trains from a job-specific seed, and scores the
//! held-out fold day by day. Jobs run in parallel and results are collected
//! in a deterministic order.

use std::collections::HashSet;

use ndarray::s;
use rand::{seq::SliceRandom as _, Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig};
use super::{TrainError, TAG_FOLDS, TAG_JOB};
use crate::features::{
    fit_scaler, FeatureSequence, PatientDays, Scaler, MAX_OBSERVATION_DAYS, MIN_PREFIX_DAYS,
};
use crate::metrics::{DayScore, FoldPredictions, PatientPrediction};
use crate::model::{forward, DropoutMode, ModelParameters};
use crate::seeds;

/// Which sequence lengths a pipeline trains and evaluates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthPolicy {
    /// Every prefix from 7 to 42 days.
    AllPrefixes,
    /// A single fixed observation length.
    Fixed(usize),
}

impl LengthPolicy {
    pub fn lengths(&self) -> Vec<usize> {
        match self {
            Self::AllPrefixes => (MIN_PREFIX_DAYS..=MAX_OBSERVATION_DAYS).collect(),
            Self::Fixed(t) => vec![*t],
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if let Self::Fixed(t) = self {
            if !(MIN_PREFIX_DAYS..=MAX_OBSERVATION_DAYS).contains(t) {
                return Err(TrainError::InvalidConfig(format!(
                    "fixed length {t} outside [{MIN_PREFIX_DAYS}, {MAX_OBSERVATION_DAYS}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub train: TrainConfig,
    pub n_runs: usize,
    pub n_folds: usize,
    /// Reshuffle the fold partition every run (otherwise only model
    /// initialization and batching differ between runs).
    pub reseed_folds: bool,
    pub length_policy: LengthPolicy,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            n_runs: 20,
            n_folds: 10,
            reseed_folds: true,
            length_policy: LengthPolicy::AllPrefixes,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.train.validate()?;
        self.length_policy.validate()?;
        if self.n_folds < 2 {
            return Err(TrainError::InvalidConfig("n_folds must be >= 2".into()));
        }
        if self.n_runs < 1 {
            return Err(TrainError::InvalidConfig("n_runs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything one (run, fold) job produced.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub predictions: FoldPredictions,
    pub params: ModelParameters,
    pub scaler: Scaler,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Patients the model trained on (including the exploration cohort,
    /// excluding the validation holdout).
    pub train_patients: Vec<String>,
    pub val_patients: Vec<String>,
    pub test_patients: Vec<String>,
}

impl JobResult {
    pub fn run(&self) -> usize {
        self.predictions.run
    }

    pub fn fold(&self) -> usize {
        self.predictions.fold
    }
}

/// Shuffle ids and split them into `n_folds` groups whose sizes differ by
/// at most one (the first `n % n_folds` folds get the extra patient).
pub fn partition_folds(ids: &[String], n_folds: usize, rng: &mut impl Rng) -> Vec<Vec<String>> {
    let mut shuffled: Vec<String> = ids.to_vec();
    shuffled.shuffle(rng);
    let base = shuffled.len() / n_folds;
    let extra = shuffled.len() % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for fold in 0..n_folds {
        let size = base + usize::from(fold < extra);
        folds.push(shuffled[start..start + size].to_vec());
        start += size;
    }
    folds
}

/// Standardized prefix sequences of the requested lengths for each patient.
fn sequences_for(
    days: &[&PatientDays],
    scaler: &Scaler,
    lengths: &[usize],
) -> Vec<FeatureSequence> {
    days.iter()
        .flat_map(|patient| {
            let scaled = scaler.apply(&patient.raw);
            lengths
                .iter()
                .map(|&len| FeatureSequence {
                    patient_id: patient.patient_id.clone(),
                    values: scaled.slice(s![.., ..len]).to_owned(),
                    dropout: patient.dropout,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn stable_softmax_positive(l0: f64, l1: f64) -> f64 {
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    e1 / (e0 + e1)
}

/// Dropout probability per observation length for each patient, scored in
/// evaluation mode.
pub fn score_patient_days(
    params: &ModelParameters,
    scaler: &Scaler,
    days: &[&PatientDays],
    lengths: &[usize],
) -> Result<Vec<PatientPrediction>, TrainError> {
    let seqs = sequences_for(days, scaler, lengths);
    let refs: Vec<&FeatureSequence> = seqs.iter().collect();
    let mut scores = Vec::with_capacity(seqs.len());
    for chunk in refs.chunks(256) {
        let batch = crate::features::collate(chunk);
        let (logits, _) = forward(params, &batch, DropoutMode::Eval)?;
        for row in logits.rows() {
            scores.push(stable_softmax_positive(row[0], row[1]));
        }
    }
    let per_patient = lengths.len();
    Ok(days
        .iter()
        .enumerate()
        .map(|(i, patient)| PatientPrediction {
            patient_id: patient.patient_id.clone(),
            dropout: patient.dropout,
            scores: lengths
                .iter()
                .enumerate()
                .map(|(j, &len)| DayScore {
                    day: len,
                    p_dropout: scores[i * per_patient + j],
                })
                .collect(),
        })
        .collect())
}

/// Repeated k-fold cross-validation. Per fold, the training set is the
/// other k-1 folds plus the whole exploration cohort; the exploration
/// cohort is never part of any test fold.
pub fn cross_validate(
    main: &[PatientDays],
    exploration: &[PatientDays],
    cfg: &CvConfig,
) -> Result<Vec<JobResult>, TrainError> {
    cfg.validate()?;
    let main_ids: HashSet<&str> = main.iter().map(|d| d.patient_id.as_str()).collect();
    let overlap: Vec<String> = exploration
        .iter()
        .filter(|d| main_ids.contains(d.patient_id.as_str()))
        .map(|d| d.patient_id.clone())
        .collect();
    if !overlap.is_empty() {
        return Err(TrainError::CohortOverlap(overlap));
    }
    if main.len() < cfg.n_folds {
        return Err(TrainError::InvalidConfig(format!(
            "{} patients cannot fill {} folds",
            main.len(),
            cfg.n_folds
        )));
    }

    let seed = cfg.train.seed;
    let ids: Vec<String> = main.iter().map(|d| d.patient_id.clone()).collect();
    let lengths = cfg.length_policy.lengths();

    let mut jobs = Vec::with_capacity(cfg.n_runs * cfg.n_folds);
    for run in 0..cfg.n_runs {
        let fold_tag = if cfg.reseed_folds { run as u64 } else { 0 };
        let mut rng = seeds::rng_from(seed, &[TAG_FOLDS, fold_tag]);
        for (fold, test_ids) in partition_folds(&ids, cfg.n_folds, &mut rng)
            .into_iter()
            .enumerate()
        {
            jobs.push((run, fold, test_ids));
        }
    }

    jobs.into_par_iter()
        .map(|(run, fold, test_ids)| {
            let test_set: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
            let test_days: Vec<&PatientDays> = main
                .iter()
                .filter(|d| test_set.contains(d.patient_id.as_str()))
                .collect();
            let train_days: Vec<&PatientDays> = main
                .iter()
                .filter(|d| !test_set.contains(d.patient_id.as_str()))
                .chain(exploration.iter())
                .collect();

            let scaler = fit_scaler(train_days.iter().map(|d| &d.raw))?;
            let train_seqs = sequences_for(&train_days, &scaler, &lengths);
            let job_config = TrainConfig {
                seed: seeds::derive_seed(seed, &[TAG_JOB, run as u64, fold as u64]),
                ..cfg.train.clone()
            };
            let outcome = train(&train_seqs, &job_config)?;
            let predictions = score_patient_days(&outcome.params, &scaler, &test_days, &lengths)?;
            Ok(JobResult {
                predictions: FoldPredictions { run, fold, predictions },
                params: outcome.params,
                scaler,
                best_epoch: outcome.best_epoch,
                stopped_epoch: outcome.stopped_epoch,
                train_loss: outcome.train_loss,
                val_loss: outcome.val_loss,
                train_patients: outcome.train_patients,
                val_patients: outcome.val_patients,
                test_patients: test_ids,
            })
        })
        .collect()
}
