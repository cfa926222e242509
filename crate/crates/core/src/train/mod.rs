//! Training and evaluation protocols: the weighted-loss training loop with
//! early stopping and learning-rate annealing, the repeated k-fold
//! cross-validation harness, random hyperparameter search, and ablation
//! runners.

mod ablation;
mod cv;
mod loss;
mod search;
mod stopper;
mod trainer;

pub use ablation::{run_ablation, AblationConfig, AblationKind, AblationOutcome, AltDefinition, ArmReport};
pub use cv::{cross_validate, partition_folds, score_patient_days, CvConfig, JobResult, LengthPolicy};
pub use loss::{class_weights, weighted_cross_entropy};
pub use search::{random_search, sample_candidates, Candidate, ScoredCandidate, SearchOutcome, SearchSpace};
pub use stopper::{Decision, EarlyStopper};
pub use trainer::{train, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::features::FeatureError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set contains a single class, so per-class weighting is undefined")]
    SingleClassTraining,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("main and exploration cohorts share patients: {0:?}")]
    CohortOverlap(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

// Seed-derivation tags keeping every random stream independent.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_VAL_SPLIT: u64 = 2;
pub(crate) const TAG_EPOCH: u64 = 3;
pub(crate) const TAG_FOLDS: u64 = 4;
pub(crate) const TAG_JOB: u64 = 5;
pub(crate) const TAG_CANDIDATE: u64 = 6;
