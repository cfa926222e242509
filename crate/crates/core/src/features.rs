//! Daily usage features and model-ready sequence construction.
//!
//! Each patient's history is summarized as a `2 × horizon` matrix: row 0 is a
//! 0/1 logged-in flag per calendar day, row 1 the seconds spent on the
//! platform that day. Day 1 is the UTC calendar day of the first login;
//! sessions spanning midnight are split across the days they touch. The
//! matrices are standardized feature-wise and expanded into one prefix
//! sequence per observation day.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adherence::{self, AdherenceDefinition, SpanConvention};
use crate::sessions::{Cohort, PatientRecord};

/// Shortest prefix the classifier is asked to score.
pub const MIN_PREFIX_DAYS: usize = 7;
/// Longest observation window; also the padded sequence length.
pub const MAX_OBSERVATION_DAYS: usize = 42;
/// logged-in flag and logged seconds.
pub const N_FEATURES: usize = 2;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit a scaler on an empty training set")]
    EmptyTrainingSet,
}

/// Raw per-day usage for one patient over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyFeatures {
    pub patient_id: String,
    /// Shape `(2, horizon)`: row 0 logged-in flag, row 1 logged seconds.
    pub values: Array2<f64>,
}

/// Sums each session's seconds into the calendar days it touches.
///
/// Days beyond `horizon_days` are ignored; a day's total is clamped to
/// 86 400 s so overlapping sessions cannot claim more than the day holds.
pub fn daily_features(record: &PatientRecord, horizon_days: usize) -> DailyFeatures {
    let mut values = Array2::zeros((N_FEATURES, horizon_days));
    let first_day = record.first_login().timestamp().div_euclid(SECONDS_PER_DAY);

    for session in &record.sessions {
        let start = session.login.timestamp();
        let end = session.logout.timestamp();
        // Half-open [start, end): a logout exactly at midnight contributes
        // nothing to the next day.
        let mut day = start.div_euclid(SECONDS_PER_DAY);
        let last_day = (end - 1).div_euclid(SECONDS_PER_DAY);
        while day <= last_day {
            let day_start = day * SECONDS_PER_DAY;
            let overlap = end.min(day_start + SECONDS_PER_DAY) - start.max(day_start);
            let rel = day - first_day;
            if (0..horizon_days as i64).contains(&rel) && overlap > 0 {
                values[(1, rel as usize)] += overlap as f64;
            }
            day += 1;
        }
    }

    for d in 0..horizon_days {
        if values[(1, d)] > SECONDS_PER_DAY as f64 {
            values[(1, d)] = SECONDS_PER_DAY as f64;
        }
        if values[(1, d)] > 0.0 {
            values[(0, d)] = 1.0;
        }
    }
    DailyFeatures { patient_id: record.patient_id.clone(), values }
}

/// Feature-wise standardization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits mean and population standard deviation per feature over every
/// (patient, day) cell of the given blocks. Features with a standard
/// deviation below 1e-8 get a divisor of 1 so constant features pass through
/// centered but unscaled.
pub fn fit_scaler<'a, I>(feature_blocks: I) -> Result<Scaler, FeatureError>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut count = 0usize;
    let mut sum = vec![0.0; N_FEATURES];
    let mut sum_sq = vec![0.0; N_FEATURES];
    for block in feature_blocks {
        debug_assert_eq!(block.nrows(), N_FEATURES);
        for (f, row) in block.rows().into_iter().enumerate() {
            for &v in row {
                sum[f] += v;
                sum_sq[f] += v * v;
            }
        }
        count += block.ncols();
    }
    if count == 0 {
        return Err(FeatureError::EmptyTrainingSet);
    }

    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq / n - m * m).max(0.0);
            let sd = var.sqrt();
            if sd < 1e-8 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(Scaler { mean, std })
}

impl Scaler {
    /// `(x - mean) / std`, row-wise per feature.
    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (f, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| (v - self.mean[f]) / self.std[f]);
        }
        out
    }

    /// Inverse of [`Scaler::apply`].
    pub fn invert(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (f, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * self.std[f] + self.mean[f]);
        }
        out
    }
}

/// One standardized prefix of a patient's history plus its outcome label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub patient_id: String,
    /// Shape `(2, len)`, standardized.
    pub values: Array2<f64>,
    /// `true` for the non-adherent (dropout) class — the positive class
    /// throughout evaluation.
    pub dropout: bool,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Expands a standardized `(2, max_len)` block into one sequence per prefix
/// length in `[min_len, max_len]`.
pub fn expand_prefixes(
    patient_id: &str,
    scaled: &Array2<f64>,
    dropout: bool,
    min_len: usize,
    max_len: usize,
) -> Vec<FeatureSequence> {
    debug_assert!(min_len >= 1 && min_len <= max_len && max_len <= scaled.ncols());
    (min_len..=max_len)
        .map(|len| FeatureSequence {
            patient_id: patient_id.to_string(),
            values: scaled.slice(s![.., ..len]).to_owned(),
            dropout,
        })
        .collect()
}

/// A zero-padded batch of sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Shape `(batch, 2, t_max)`; padded positions are zero.
    pub values: Array3<f64>,
    /// Shape `(batch, t_max)`; `true` marks a real (unpadded) position.
    pub mask: Array2<bool>,
    /// Class index per item: 0 = adherent, 1 = dropout.
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_max(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Right-pads the sequences to the longest one and stacks them.
pub fn collate(sequences: &[&FeatureSequence]) -> Batch {
    let t_max = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut values = Array3::zeros((sequences.len(), N_FEATURES, t_max));
    let mut mask = Array2::from_elem((sequences.len(), t_max), false);
    let mut labels = Vec::with_capacity(sequences.len());
    let mut lengths = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        let len = seq.len();
        values
            .slice_mut(s![i, .., ..len])
            .assign(&seq.values);
        mask.slice_mut(s![i, ..len]).fill(true);
        labels.push(usize::from(seq.dropout));
        lengths.push(len);
    }
    Batch { values, mask, labels, lengths }
}

/// Raw daily features plus outcome label for one patient; the unit the
/// cross-validation splitter works with.
#[derive(Debug, Clone)]
pub struct PatientDays {
    pub patient_id: String,
    /// Shape `(2, MAX_OBSERVATION_DAYS)`, unscaled.
    pub raw: Array2<f64>,
    pub dropout: bool,
}

/// Computes raw daily features and labels for a whole cohort. Labels use the
/// patient's complete history; features only the first
/// [`MAX_OBSERVATION_DAYS`] days.
pub fn patient_days(
    cohort: &Cohort,
    definition: &AdherenceDefinition,
    convention: SpanConvention,
) -> Vec<PatientDays> {
    cohort
        .records
        .iter()
        .map(|record| PatientDays {
            patient_id: record.patient_id.clone(),
            raw: daily_features(record, MAX_OBSERVATION_DAYS).values,
            dropout: !adherence::label(record, definition, convention).adherent,
        })
        .collect()
}
