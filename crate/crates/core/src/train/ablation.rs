//! Ablation runners: each compares the standard pipeline against one
//! controlled variation, with both arms sharing the same master seed so the
//! only difference is the ablated component. Arms are summarized as one
//! balanced accuracy per run (averaged over the evaluation days) and
//! compared with a Mann-Whitney U test.

use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, CvConfig, LengthPolicy};
use super::trainer::TrainConfig;
use super::TrainError;
use crate::adherence::{AdherenceDefinition, SpanConvention};
use crate::features::{patient_days, PatientDays, MAX_OBSERVATION_DAYS, MIN_PREFIX_DAYS};
use crate::metrics::{
    evaluate, mann_whitney_u, mean, EvaluationReport, MwuResult, REPORTING_DAYS, THRESHOLD_BARS,
};
use crate::sessions::Cohort;

/// Stricter alternative adherence definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AltDefinition {
    /// 12 connections of more than 150 seconds.
    A,
    /// 16 connections of more than 300 seconds.
    B,
}

impl AltDefinition {
    pub fn definition(&self) -> AdherenceDefinition {
        match self {
            Self::A => AdherenceDefinition::alternative_a(),
            Self::B => AdherenceDefinition::alternative_b(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AblationKind {
    /// Turn per-class loss weighting off.
    Weighting,
    /// Train on a single observation length instead of every prefix.
    FixedLength(usize),
    /// Relabel the cohort with a stricter adherence definition.
    AdherenceDefinition(AltDefinition),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Baseline pipeline settings; the length policy is forced to all
    /// prefixes and class weighting on, so this arm is always the
    /// standard protocol.
    pub cv: CvConfig,
    pub convention: SpanConvention,
    /// Training configuration for the variant arm only, when the variant
    /// has its own searched hyperparameters (e.g. per-length search
    /// results). The master seed is still shared with the baseline.
    pub variant_train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub report: EvaluationReport,
    /// One balanced accuracy per run: the mean over the evaluation days.
    pub run_level_ba: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub kind: AblationKind,
    /// Days on which the two arms are compared.
    pub eval_days: Vec<usize>,
    pub baseline: ArmReport,
    pub variant: ArmReport,
    pub mwu: MwuResult,
}

fn run_arm(
    name: &str,
    main: &[PatientDays],
    exploration: &[PatientDays],
    cfg: &CvConfig,
    eval_days: &[usize],
) -> Result<ArmReport, TrainError> {
    let results = cross_validate(main, exploration, cfg)?;
    let folds: Vec<_> = results.into_iter().map(|r| r.predictions).collect();
    let report = evaluate(&folds, &REPORTING_DAYS, &THRESHOLD_BARS)?;
    let day_indices: Vec<usize> = report
        .days
        .iter()
        .enumerate()
        .filter(|(_, day)| eval_days.contains(day))
        .map(|(i, _)| i)
        .collect();
    if day_indices.is_empty() {
        return Err(TrainError::InvalidConfig(format!(
            "arm {name} produced no predictions on evaluation days {eval_days:?}"
        )));
    }
    let run_level_ba = report
        .run_day_ba
        .iter()
        .map(|row| mean(&day_indices.iter().map(|&i| row[i]).collect::<Vec<_>>()))
        .collect();
    Ok(ArmReport { name: name.to_string(), report, run_level_ba })
}

/// Run baseline and variant with the same seed and compare their run-level
/// balanced accuracies.
pub fn run_ablation(
    main: &Cohort,
    exploration: &Cohort,
    kind: AblationKind,
    cfg: &AblationConfig,
) -> Result<AblationOutcome, TrainError> {
    let mut baseline_cfg = cfg.cv.clone();
    baseline_cfg.length_policy = LengthPolicy::AllPrefixes;
    baseline_cfg.train.class_weighting = true;

    let base_def = AdherenceDefinition::original();
    let main_base = patient_days(main, &base_def, cfg.convention);
    let expl_base = patient_days(exploration, &base_def, cfg.convention);

    let eval_days: Vec<usize> = match kind {
        AblationKind::FixedLength(t) => vec![t],
        _ => (MIN_PREFIX_DAYS..=MAX_OBSERVATION_DAYS).collect(),
    };

    let mut variant_cfg = baseline_cfg.clone();
    if let Some(train) = &cfg.variant_train {
        variant_cfg.train = TrainConfig { seed: baseline_cfg.train.seed, ..train.clone() };
    }
    let (variant_name, variant_main, variant_expl) = match kind {
        AblationKind::Weighting => {
            variant_cfg.train.class_weighting = false;
            ("unweighted".to_string(), None, None)
        }
        AblationKind::FixedLength(t) => {
            variant_cfg.length_policy = LengthPolicy::Fixed(t);
            (format!("fixed_length_{t}"), None, None)
        }
        AblationKind::AdherenceDefinition(alt) => {
            let def = alt.definition();
            (
                format!("adherence_definition_{alt:?}"),
                Some(patient_days(main, &def, cfg.convention)),
                Some(patient_days(exploration, &def, cfg.convention)),
            )
        }
    };

    let baseline = run_arm("baseline", &main_base, &expl_base, &baseline_cfg, &eval_days)?;
    let variant = run_arm(
        &variant_name,
        variant_main.as_deref().unwrap_or(&main_base),
        variant_expl.as_deref().unwrap_or(&expl_base),
        &variant_cfg,
        &eval_days,
    )?;

    let mwu = mann_whitney_u(&baseline.run_level_ba, &variant.run_level_ba)?;
    Ok(AblationOutcome { kind, eval_days, baseline, variant, mwu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessions::generate_synthetic_cohort;

    /// Generated cohorts share an id namespace; prefix one side so main
    /// and exploration are disjoint, as they are in real pipelines.
    fn prefixed(mut cohort: Cohort, prefix: &str) -> Cohort {
        for record in &mut cohort.records {
            record.patient_id = format!("{prefix}{}", record.patient_id);
            for session in &mut record.sessions {
                session.patient_id = record.patient_id.clone();
            }
        }
        cohort
    }

    fn quick_cfg(seed: u64) -> AblationConfig {
        AblationConfig {
            cv: CvConfig {
                train: TrainConfig { max_epochs: 1, seed, ..TrainConfig::default() },
                n_runs: 2,
                n_folds: 2,
                reseed_folds: true,
                length_policy: LengthPolicy::AllPrefixes,
            },
            convention: SpanConvention::default(),
            variant_train: None,
        }
    }

    #[test]
    fn weighting_ablation_produces_paired_series() {
        let main = generate_synthetic_cohort(4, 4, 70, 5).unwrap();
        let exploration = prefixed(generate_synthetic_cohort(2, 2, 70, 6).unwrap(), "x");
        let outcome =
            run_ablation(&main, &exploration, AblationKind::Weighting, &quick_cfg(1)).unwrap();

        assert_eq!(outcome.eval_days.len(), 36);
        for arm in [&outcome.baseline, &outcome.variant] {
            assert_eq!(arm.report.days, (7..=42).collect::<Vec<_>>());
            assert_eq!(arm.run_level_ba.len(), 2);
            assert_eq!(arm.report.run_day_ba.len(), 2);
        }
        assert_eq!(outcome.baseline.name, "baseline");
        assert_eq!(outcome.variant.name, "unweighted");
        assert!(outcome.mwu.p_value > 0.0 && outcome.mwu.p_value <= 1.0);
    }

    #[test]
    fn fixed_length_ablation_evaluates_only_that_day() {
        let main = generate_synthetic_cohort(4, 4, 70, 7).unwrap();
        let exploration = prefixed(generate_synthetic_cohort(2, 2, 70, 8).unwrap(), "x");
        let outcome = run_ablation(
            &main,
            &exploration,
            AblationKind::FixedLength(42),
            &quick_cfg(2),
        )
        .unwrap();
        assert_eq!(outcome.eval_days, vec![42]);
        // The variant trains and predicts at day 42 only; the baseline
        // still predicts every day but is compared at day 42.
        assert_eq!(outcome.variant.report.days, vec![42]);
        assert_eq!(outcome.baseline.report.days.len(), 36);
        assert_eq!(outcome.variant.run_level_ba.len(), 2);
    }

    #[test]
    fn adherence_definition_ablation_relabels_the_cohort() {
        let main = generate_synthetic_cohort(5, 4, 70, 9).unwrap();
        let exploration = prefixed(generate_synthetic_cohort(2, 2, 70, 10).unwrap(), "x");
        let outcome = run_ablation(
            &main,
            &exploration,
            AblationKind::AdherenceDefinition(AltDefinition::B),
            &quick_cfg(3),
        )
        .unwrap();
        assert_eq!(outcome.variant.name, "adherence_definition_B");

        // The stricter definition can only move labels toward dropout.
        let base = patient_days(&main, &AdherenceDefinition::original(), SpanConvention::default());
        let strict = patient_days(&main, &AltDefinition::B.definition(), SpanConvention::default());
        for (a, b) in base.iter().zip(&strict) {
            assert!(b.dropout || !a.dropout);
        }
    }

    #[test]
    fn arms_share_the_seed_so_baselines_agree_across_kinds() {
        let main = generate_synthetic_cohort(4, 4, 70, 11).unwrap();
        let exploration = prefixed(generate_synthetic_cohort(2, 2, 70, 12).unwrap(), "x");
        let cfg = quick_cfg(4);
        let w = run_ablation(&main, &exploration, AblationKind::Weighting, &cfg).unwrap();
        let f =
            run_ablation(&main, &exploration, AblationKind::FixedLength(20), &cfg).unwrap();
        assert_eq!(w.baseline.report.run_day_ba, f.baseline.report.run_day_ba);
    }
}
