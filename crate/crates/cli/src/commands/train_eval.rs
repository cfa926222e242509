//! `adherence train-eval`: the full forecasting protocol — patient-level
//! k-fold cross-validation repeated over several runs, one model per
//! (run, fold), evaluated day by day from 7 to 42 observed days.

use std::path::{Path, PathBuf};

use clap::Args;

use adherence_core::features::{patient_days, PatientDays};
use adherence_core::metrics::{
    evaluate_pooled, EvaluationReport, FoldPooling, REPORTING_DAYS, THRESHOLD_BARS,
};
use adherence_core::model::Checkpoint;
use adherence_core::train::{
    cross_validate, CvConfig, JobResult, LengthPolicy, TrainConfig, TrainError,
};

use crate::manifest::RunManifest;
use crate::{usage_error, CliError, CliResult, DefinitionArg, InputArgs};
use crate::outln;

#[derive(Debug, Args)]
pub struct TrainEvalArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Adherence definition used for the outcome labels.
    #[arg(long, value_enum, default_value = "original")]
    definition: DefinitionArg,

    /// Cross-validation repetitions.
    #[arg(long, default_value_t = 20)]
    runs: usize,

    /// Cross-validation folds per run.
    #[arg(long, default_value_t = 10)]
    folds: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cap on training epochs (early stopping usually ends much sooner).
    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,

    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,

    /// AdamW learning rate.
    #[arg(long)]
    lr: Option<f64>,

    /// Train and evaluate only at this observation length (in days)
    /// instead of every prefix from 7 to 42.
    #[arg(long, value_name = "DAYS")]
    fixed_length: Option<usize>,

    /// Disable per-class loss weighting.
    #[arg(long)]
    no_weighting: bool,

    /// Reuse one fold partition for all runs; runs then differ only in
    /// initialization and batch order.
    #[arg(long)]
    no_reseed_folds: bool,

    /// Save one model checkpoint per (run, fold) under <OUT_DIR>/models/.
    #[arg(long)]
    save_models: bool,

    /// Also write every patient's raw daily features to <OUT_DIR>/features.csv.
    #[arg(long)]
    dump_features: bool,

    /// How a run's folds combine into its balanced accuracy: pool the fold
    /// predictions first, or score folds separately and average after.
    #[arg(long, value_enum, default_value = "first", value_name = "MODE")]
    pool_folds: PoolFoldsArg,

    /// Directory for day_series.csv, the per-day reports, and the manifest.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PoolFoldsArg {
    First,
    After,
}

impl PoolFoldsArg {
    fn pooling(self) -> FoldPooling {
        match self {
            PoolFoldsArg::First => FoldPooling::PredictionsFirst,
            PoolFoldsArg::After => FoldPooling::BalancedAccuracyAfter,
        }
    }
}

impl TrainEvalArgs {
    fn cv_config(&self) -> CliResult<CvConfig> {
        let mut train = TrainConfig { seed: self.seed, ..TrainConfig::default() };
        if let Some(n) = self.max_epochs {
            train.max_epochs = n;
        }
        if let Some(n) = self.batch_size {
            train.batch_size = n;
        }
        if let Some(lr) = self.lr {
            train.lr = lr;
        }
        train.class_weighting = !self.no_weighting;

        let cfg = CvConfig {
            train,
            n_runs: self.runs,
            n_folds: self.folds,
            reseed_folds: !self.no_reseed_folds,
            length_policy: match self.fixed_length {
                Some(t) => LengthPolicy::Fixed(t),
                None => LengthPolicy::AllPrefixes,
            },
        };
        // Nonsense values (zero folds, out-of-range lengths, ...) are usage
        // errors, not runtime failures.
        if let Err(TrainError::InvalidConfig(message)) = cfg.validate() {
            return usage_error(message);
        }
        Ok(cfg)
    }
}

pub fn run(args: TrainEvalArgs) -> CliResult {
    let cfg = args.cv_config()?;
    let definition = args.definition.definition();
    let convention = args.input.span_convention.convention();

    let loaded = crate::pipeline::load_sessions(&args.input.input)?;
    let (main, exploration) =
        crate::pipeline::split_exploration(loaded.cohort, &args.input, args.seed)?;

    let main_days = patient_days(&main, &definition, convention);
    let expl_days = patient_days(&exploration, &definition, convention);
    let dropouts = main_days.iter().chain(&expl_days).filter(|d| d.dropout).count();

    crate::pipeline::ensure_out_dir(&args.out_dir)?;
    let exploration_ids: Vec<&str> = exploration.patient_ids().collect();
    let config = serde_json::json!({
        "cv": cfg,
        "definition": definition,
        "span_convention": convention,
        "exploration_ids": exploration_ids,
        "save_models": args.save_models,
        "pool_folds": args.pool_folds.pooling(),
    });
    let mut manifest =
        RunManifest::start("train-eval", Some(args.seed), Some(loaded.sha256.clone()), config);
    let manifest_path = args.out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    if !exploration_ids.is_empty() {
        let list = exploration_ids.join("\n") + "\n";
        crate::pipeline::write_file(&args.out_dir.join("exploration_ids.txt"), &list)?;
    }
    if args.dump_features {
        let all: Vec<&PatientDays> = main_days.iter().chain(&expl_days).collect();
        crate::pipeline::write_file(&args.out_dir.join("features.csv"), &features_csv(&all))?;
    }

    outln!(
        "cohort: {} patients (main {}, exploration {}); {}/{} non-adherent",
        main.len() + exploration.len(),
        main.len(),
        exploration.len(),
        dropouts,
        main.len() + exploration.len(),
    );
    outln!(
        "protocol: {} runs x {} folds, observation days {}, seed {}",
        cfg.n_runs,
        cfg.n_folds,
        match cfg.length_policy {
            LengthPolicy::AllPrefixes => "7..42".to_string(),
            LengthPolicy::Fixed(t) => t.to_string(),
        },
        args.seed
    );

    let results = cross_validate(&main_days, &expl_days, &cfg).map_err(into_runtime)?;
    if args.save_models {
        save_checkpoints(&args.out_dir, &results)?;
    }

    let folds: Vec<_> = results.into_iter().map(|r| r.predictions).collect();
    let report = evaluate_pooled(&folds, &REPORTING_DAYS, &THRESHOLD_BARS, args.pool_folds.pooling())
        .map_err(anyhow::Error::new)?;
    write_report(&args.out_dir, &report)?;
    manifest.finish(&manifest_path)?;

    print_summary(&report);
    outln!("wrote results to {}", args.out_dir.display());
    Ok(())
}

fn into_runtime(err: TrainError) -> CliError {
    CliError::Runtime(anyhow::Error::new(err))
}

/// One row per patient and observation day, unscaled: the binary login
/// indicator and the summed seconds spent logged in that day.
fn features_csv(patients: &[&PatientDays]) -> String {
    let mut sorted: Vec<&&PatientDays> = patients.iter().collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let mut csv = String::from("patient_id,day,logged_in,logged_seconds\n");
    for patient in sorted {
        for day in 0..patient.raw.ncols() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                patient.patient_id,
                day + 1,
                patient.raw[(0, day)] as u8,
                patient.raw[(1, day)],
            ));
        }
    }
    csv
}

fn save_checkpoints(out_dir: &Path, results: &[JobResult]) -> CliResult {
    let dir = out_dir.join("models");
    crate::pipeline::ensure_out_dir(&dir)?;
    for job in results {
        let name = format!("run{:02}_fold{:02}.json", job.run(), job.fold());
        let checkpoint = Checkpoint::from_model(&job.params, &job.scaler);
        crate::pipeline::write_file(&dir.join(name), &checkpoint.to_json())?;
    }
    Ok(())
}

/// Writes the fixed result files: `day_series.csv`, `confusion_day{d}.json`
/// and `pr_day{d}.json` for each reporting day with predictions, and
/// `thresholds.json`.
pub fn write_report(out_dir: &Path, report: &EvaluationReport) -> CliResult {
    crate::pipeline::write_file(&out_dir.join("day_series.csv"), &report.day_series.to_csv())?;
    for (day, cm) in &report.confusion_by_day {
        let path = out_dir.join(format!("confusion_day{day}.json"));
        crate::pipeline::write_file(&path, &crate::pipeline::to_pretty_json(cm)?)?;
    }
    for (day, pr) in &report.pr_by_day {
        let path = out_dir.join(format!("pr_day{day}.json"));
        crate::pipeline::write_file(&path, &crate::pipeline::to_pretty_json(pr)?)?;
    }
    crate::pipeline::write_file(
        &out_dir.join("thresholds.json"),
        &crate::pipeline::to_pretty_json(&report.thresholds)?,
    )?;
    Ok(())
}

pub fn print_summary(report: &EvaluationReport) {
    for point in &report.day_series.points {
        if REPORTING_DAYS.contains(&point.day) || report.day_series.points.len() == 1 {
            outln!(
                "day {:>2}: balanced accuracy {:.3} [{:.3}, {:.3}]",
                point.day, point.mean, point.lower, point.upper
            );
        }
    }
    for crossing in &report.thresholds {
        let bar = format!("{:.0}%", crossing.bar * 100.0);
        match crossing.day {
            Some(day) => outln!("CI lower bound above {bar}: day {day}"),
            None => outln!("CI lower bound above {bar}: not reached"),
        }
    }
}
