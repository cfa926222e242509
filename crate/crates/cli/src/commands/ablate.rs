//! `adherence ablate`: run the standard pipeline and one controlled
//! variation with a shared seed, then compare their run-level balanced
//! accuracies with a Mann-Whitney U test.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Subcommand};

use adherence_core::metrics::MwuMethod;
use adherence_core::train::{
    run_ablation, AblationConfig, AblationKind, CvConfig, TrainConfig, TrainError,
};

use crate::manifest::RunManifest;
use crate::{usage_error, AltArg, CliError, CliResult, InputArgs};
use crate::outln;

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[command(subcommand)]
    kind: AblateKindCmd,
}

#[derive(Debug, Subcommand)]
enum AblateKindCmd {
    /// Disable per-class loss weighting in the variant arm.
    Weighting(AblateArgs),
    /// Train and evaluate the variant at one fixed observation length.
    FixedLength(FixedLengthArgs),
    /// Relabel outcomes with a stricter adherence definition.
    AdherenceDef(AdherenceDefArgs),
}

#[derive(Debug, Args)]
struct FixedLengthArgs {
    /// Observation length in days (7 to 42).
    #[arg(value_name = "DAYS")]
    days: usize,

    #[command(flatten)]
    common: AblateArgs,
}

#[derive(Debug, Args)]
struct AdherenceDefArgs {
    /// Which alternative definition labels the variant arm.
    #[arg(value_enum)]
    alternative: AltArg,

    #[command(flatten)]
    common: AblateArgs,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Cross-validation repetitions per arm.
    #[arg(long, default_value_t = 20)]
    runs: usize,

    /// Cross-validation folds per run.
    #[arg(long, default_value_t = 10)]
    folds: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cap on training epochs, applied to both arms.
    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,

    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,

    /// Reuse one fold partition for all runs.
    #[arg(long)]
    no_reseed_folds: bool,

    /// JSON file with a full training configuration for the variant arm
    /// only (e.g. hyperparameters searched per observation length); the
    /// master seed is still shared with the baseline.
    #[arg(long, value_name = "FILE")]
    variant_train: Option<PathBuf>,

    /// Directory for the two day series, the test result, and the manifest.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,
}

pub fn run(cmd: AblateCmd) -> CliResult {
    let (kind, args) = match cmd.kind {
        AblateKindCmd::Weighting(args) => (AblationKind::Weighting, args),
        AblateKindCmd::FixedLength(inner) => {
            (AblationKind::FixedLength(inner.days), inner.common)
        }
        AblateKindCmd::AdherenceDef(inner) => {
            (AblationKind::AdherenceDefinition(inner.alternative.alt()), inner.common)
        }
    };

    let mut train = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    if let Some(n) = args.max_epochs {
        train.max_epochs = n;
    }
    if let Some(n) = args.batch_size {
        train.batch_size = n;
    }
    let cv = CvConfig {
        train,
        n_runs: args.runs,
        n_folds: args.folds,
        reseed_folds: !args.no_reseed_folds,
        ..CvConfig::default()
    };
    if let Err(TrainError::InvalidConfig(message)) = cv.validate() {
        return usage_error(message);
    }
    if let AblationKind::FixedLength(t) = kind {
        if !(7..=42).contains(&t) {
            return usage_error(format!("fixed length {t} must be between 7 and 42 days"));
        }
    }

    let variant_train: Option<TrainConfig> = match &args.variant_train {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read variant config `{}`", path.display()))?;
            Some(
                serde_json::from_str(&text)
                    .with_context(|| format!("invalid training config `{}`", path.display()))?,
            )
        }
        None => None,
    };

    let config = AblationConfig {
        cv,
        convention: args.input.span_convention.convention(),
        variant_train,
    };

    let loaded = crate::pipeline::load_sessions(&args.input.input)?;
    let (main, exploration) =
        crate::pipeline::split_exploration(loaded.cohort, &args.input, args.seed)?;

    crate::pipeline::ensure_out_dir(&args.out_dir)?;
    let manifest_config = serde_json::json!({
        "kind": kind,
        "ablation": config,
        "exploration_ids": exploration.patient_ids().collect::<Vec<_>>(),
    });
    let mut manifest =
        RunManifest::start("ablate", Some(args.seed), Some(loaded.sha256.clone()), manifest_config);
    let manifest_path = args.out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;

    let outcome = run_ablation(&main, &exploration, kind, &config)
        .map_err(|e| CliError::Runtime(anyhow::Error::new(e)))?;

    crate::pipeline::write_file(
        &args.out_dir.join("baseline_day_series.csv"),
        &outcome.baseline.report.day_series.to_csv(),
    )?;
    crate::pipeline::write_file(
        &args.out_dir.join("variant_day_series.csv"),
        &outcome.variant.report.day_series.to_csv(),
    )?;
    crate::pipeline::write_file(
        &args.out_dir.join("mwu.json"),
        &crate::pipeline::to_pretty_json(&outcome.mwu)?,
    )?;
    crate::pipeline::write_file(
        &args.out_dir.join("ablation.json"),
        &crate::pipeline::to_pretty_json(&outcome)?,
    )?;
    manifest.finish(&manifest_path)?;

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    outln!(
        "baseline ({} runs): mean run-level balanced accuracy {:.3}",
        outcome.baseline.run_level_ba.len(),
        mean(&outcome.baseline.run_level_ba)
    );
    outln!(
        "variant `{}` ({} runs): mean run-level balanced accuracy {:.3}",
        outcome.variant.name,
        outcome.variant.run_level_ba.len(),
        mean(&outcome.variant.run_level_ba)
    );
    let method = match outcome.mwu.method {
        MwuMethod::Exact => "exact",
        MwuMethod::NormalApproximation => "normal approximation",
    };
    outln!(
        "Mann-Whitney U = {:.1}, two-sided p = {:.4} ({method})",
        outcome.mwu.u, outcome.mwu.p_value
    );
    outln!("wrote results to {}", args.out_dir.display());
    Ok(())
}
