//! Random hyperparameter search scored by k-fold cross-validation on the
//! exploration cohort.

use rand::{seq::SliceRandom as _, Rng as _};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, CvConfig, LengthPolicy};
use super::trainer::TrainConfig;
use super::{TrainError, TAG_CANDIDATE};
use crate::features::PatientDays;
use crate::metrics::{evaluate, mean};
use crate::model::HyperParams;
use crate::seeds;

/// Folds used to score one candidate on the exploration cohort.
pub const SEARCH_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Learning rate is drawn log-uniformly: `10^U(lo, hi)`.
    pub lr_log10: (f64, f64),
    pub d_model: Vec<usize>,
    pub n_heads: Vec<usize>,
    pub ffn_hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub n_layers: Vec<usize>,
    pub n_candidates: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let powers_of_two: Vec<usize> = (0..=7).map(|e| 1usize << e).collect();
        Self {
            lr_log10: (-5.0, 0.0),
            d_model: powers_of_two.clone(),
            n_heads: vec![1, 2, 4, 8],
            ffn_hidden: powers_of_two,
            dropout: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            n_layers: vec![1, 2, 3],
            n_candidates: 100,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_candidates < 1 {
            return Err(TrainError::InvalidConfig("n_candidates must be >= 1".into()));
        }
        if self.d_model.is_empty()
            || self.n_heads.is_empty()
            || self.ffn_hidden.is_empty()
            || self.dropout.is_empty()
            || self.n_layers.is_empty()
        {
            return Err(TrainError::InvalidConfig("search space lists must be non-empty".into()));
        }
        if self.lr_log10.0 > self.lr_log10.1 {
            return Err(TrainError::InvalidConfig("lr_log10 range is inverted".into()));
        }
        for &d in &self.d_model {
            if !self.n_heads.iter().any(|&h| d % h == 0) {
                return Err(TrainError::InvalidConfig(format!(
                    "no head count in {:?} divides embedding size {d}",
                    self.n_heads
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub hp: HyperParams,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    /// Mean balanced accuracy over days 7-42 of the exploration CV.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Candidate,
    /// All candidates, best first.
    pub leaderboard: Vec<ScoredCandidate>,
}

/// Draw the candidate list. The head count is drawn uniformly among the
/// space's head counts that divide the drawn embedding size, which is the
/// stationary distribution of resampling incompatible draws.
pub fn sample_candidates(space: &SearchSpace, seed: u64) -> Result<Vec<Candidate>, TrainError> {
    space.validate()?;
    let mut rng = seeds::rng_from(seed, &[TAG_CANDIDATE]);
    let (lo, hi) = space.lr_log10;
    let mut out = Vec::with_capacity(space.n_candidates);
    for _ in 0..space.n_candidates {
        let exponent = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let lr = 10f64.powf(exponent);
        let d_model = *space.d_model.choose(&mut rng).expect("validated non-empty");
        let valid_heads: Vec<usize> =
            space.n_heads.iter().copied().filter(|h| d_model % h == 0).collect();
        let n_heads = *valid_heads.choose(&mut rng).expect("validated divisor exists");
        let ffn_hidden = *space.ffn_hidden.choose(&mut rng).expect("validated non-empty");
        let dropout = *space.dropout.choose(&mut rng).expect("validated non-empty");
        let n_layers = *space.n_layers.choose(&mut rng).expect("validated non-empty");
        out.push(Candidate {
            hp: HyperParams { d_model, n_heads, ffn_hidden, dropout, n_layers, ..HyperParams::default() },
            lr,
        });
    }
    Ok(out)
}

/// Score every candidate by `SEARCH_FOLDS`-fold CV on the exploration
/// cohort (one run each), ranking by mean balanced accuracy over all
/// prediction days. Candidates whose evaluation fails outright (e.g. a
/// diverged model predicting one class everywhere) rank last with a NaN
/// score instead of aborting the search.
pub fn random_search(
    exploration: &[PatientDays],
    space: &SearchSpace,
    base: &TrainConfig,
    seed: u64,
) -> Result<SearchOutcome, TrainError> {
    let candidates = sample_candidates(space, seed)?;
    let mut leaderboard: Vec<ScoredCandidate> = candidates
        .into_par_iter()
        .enumerate()
        .map(|(i, candidate)| {
            let cfg = CvConfig {
                train: TrainConfig {
                    hp: candidate.hp,
                    lr: candidate.lr,
                    seed: seeds::derive_seed(seed, &[TAG_CANDIDATE, i as u64]),
                    ..base.clone()
                },
                n_runs: 1,
                n_folds: SEARCH_FOLDS,
                reseed_folds: false,
                length_policy: LengthPolicy::AllPrefixes,
            };
            let results = cross_validate(exploration, &[], &cfg)?;
            let folds: Vec<_> = results.into_iter().map(|r| r.predictions).collect();
            let score = match evaluate(&folds, &[], &[]) {
                Ok(report) => mean(&report.run_day_ba[0]),
                Err(_) => f64::NAN,
            };
            Ok(ScoredCandidate { candidate, score })
        })
        .collect::<Result<_, TrainError>>()?;

    leaderboard.sort_by(|a, b| {
        // Descending score, NaN last.
        match (a.score.is_nan(), b.score.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            (false, false) => b.score.total_cmp(&a.score),
        }
    });
    let best = leaderboard[0].candidate.clone();
    Ok(SearchOutcome { best, leaderboard })
}
