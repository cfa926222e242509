//! `adherence predict`: load a saved checkpoint and score one patient's
//! dropout risk from their first days of platform usage.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use adherence_core::features::{
    daily_features, PatientDays, MAX_OBSERVATION_DAYS, MIN_PREFIX_DAYS,
};
use adherence_core::model::Checkpoint;
use adherence_core::sessions::{build_cohort, parse_sessions, Provenance};
use adherence_core::train::score_patient_days;

use crate::{usage_error, CliError, CliResult};
use crate::outln;

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model checkpoint (JSON) written by `train-eval --save-models`.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Patient id to score.
    #[arg(long, value_name = "ID")]
    patient: String,

    /// Sessions CSV containing the patient's login/logout history.
    #[arg(short, long, value_name = "FILE")]
    input: PathBuf,

    /// Observation length in days (7 to 42). Prints one dropout probability;
    /// without it, a CSV with one probability per observation day.
    #[arg(long, value_name = "DAY")]
    day: Option<usize>,
}

pub fn run(args: PredictArgs) -> CliResult {
    let lengths: Vec<usize> = match args.day {
        Some(day) => {
            if !(MIN_PREFIX_DAYS..=MAX_OBSERVATION_DAYS).contains(&day) {
                return usage_error(format!(
                    "--day {day} must be between {MIN_PREFIX_DAYS} and {MAX_OBSERVATION_DAYS}"
                ));
            }
            vec![day]
        }
        None => (MIN_PREFIX_DAYS..=MAX_OBSERVATION_DAYS).collect(),
    };

    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("cannot read model file `{}`", args.model.display()))?;
    let (params, scaler) = Checkpoint::from_json(&text)
        .and_then(Checkpoint::into_model)
        .with_context(|| format!("invalid checkpoint `{}`", args.model.display()))?;

    let csv = std::fs::read_to_string(&args.input)
        .with_context(|| format!("cannot read sessions file `{}`", args.input.display()))?;
    let events = parse_sessions(&csv)
        .with_context(|| format!("malformed sessions file `{}`", args.input.display()))?;
    let (cohort, _) = build_cohort(events, Provenance::Real);
    let record = cohort
        .records
        .iter()
        .find(|r| r.patient_id == args.patient)
        .ok_or_else(|| {
            CliError::Runtime(anyhow::anyhow!(
                "patient `{}` not found in `{}`",
                args.patient,
                args.input.display()
            ))
        })?;

    let days = PatientDays {
        patient_id: record.patient_id.clone(),
        raw: daily_features(record, MAX_OBSERVATION_DAYS).values,
        // The true outcome is unknown at prediction time; the scorer does
        // not read it.
        dropout: false,
    };
    let predictions = score_patient_days(&params, &scaler, &[&days], &lengths)
        .map_err(|e| CliError::Runtime(anyhow::Error::new(e)))?;
    let scores = &predictions[0].scores;

    match args.day {
        Some(_) => outln!("{}", scores[0].p_dropout),
        None => {
            outln!("day,p_dropout");
            for score in scores {
                outln!("{},{}", score.day, score.p_dropout);
            }
        }
    }
    Ok(())
}
