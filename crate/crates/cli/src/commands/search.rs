//! `adherence search`: random hyperparameter search scored by
//! cross-validation on the exploration cohort.

use std::path::PathBuf;

use clap::Args;

use adherence_core::adherence::AdherenceDefinition;
use adherence_core::features::patient_days;
use adherence_core::train::{random_search, SearchSpace, TrainConfig, TrainError};

use crate::manifest::RunManifest;
use crate::{usage_error, CliError, CliResult, InputArgs};
use crate::outln;

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Without --exploration-ids/--exploration-count the whole input cohort
    /// is treated as the exploration cohort.
    #[command(flatten)]
    input: InputArgs,

    /// Number of random candidates to draw and score.
    #[arg(long, default_value_t = 100)]
    candidates: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cap on training epochs per candidate fold.
    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,

    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,

    /// Directory for leaderboard.json and the manifest.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,
}

pub fn run(args: SearchArgs) -> CliResult {
    if args.candidates == 0 {
        return usage_error("--candidates must be at least 1");
    }

    let loaded = crate::pipeline::load_sessions(&args.input.input)?;
    let splitting = args.input.exploration_ids.is_some() || args.input.exploration_count.is_some();
    let (_, exploration) = if splitting {
        crate::pipeline::split_exploration(loaded.cohort, &args.input, args.seed)?
    } else {
        let empty = adherence_core::sessions::Cohort {
            records: Vec::new(),
            provenance: loaded.cohort.provenance,
        };
        (empty, loaded.cohort)
    };
    if exploration.is_empty() {
        return usage_error("the exploration cohort is empty; nothing to search on");
    }

    let definition = AdherenceDefinition::original();
    let convention = args.input.span_convention.convention();
    let expl_days = patient_days(&exploration, &definition, convention);

    let mut base = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    if let Some(n) = args.max_epochs {
        base.max_epochs = n;
    }
    if let Some(n) = args.batch_size {
        base.batch_size = n;
    }
    let space = SearchSpace { n_candidates: args.candidates, ..SearchSpace::default() };

    crate::pipeline::ensure_out_dir(&args.out_dir)?;
    let config = serde_json::json!({
        "space": space,
        "base_train": base,
        "exploration_patients": exploration.len(),
    });
    let mut manifest =
        RunManifest::start("search", Some(args.seed), Some(loaded.sha256.clone()), config);
    let manifest_path = args.out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;

    outln!(
        "scoring {} candidates with 5-fold cross-validation on {} exploration patients",
        args.candidates,
        exploration.len()
    );
    let outcome = random_search(&expl_days, &space, &base, args.seed)
        .map_err(|e: TrainError| CliError::Runtime(anyhow::Error::new(e)))?;

    crate::pipeline::write_file(
        &args.out_dir.join("leaderboard.json"),
        &crate::pipeline::to_pretty_json(&outcome)?,
    )?;
    manifest.finish(&manifest_path)?;

    outln!("top candidates (mean balanced accuracy over days 7..42):");
    for (rank, scored) in outcome.leaderboard.iter().take(5).enumerate() {
        let hp = &scored.candidate.hp;
        outln!(
            "  {}. score {:.3}  lr {:.6}  d_model {}  heads {}  ffn {}  layers {}  dropout {:.1}",
            rank + 1,
            scored.score,
            scored.candidate.lr,
            hp.d_model,
            hp.n_heads,
            hp.ffn_hidden,
            hp.n_layers,
            hp.dropout
        );
    }
    outln!("wrote leaderboard to {}", args.out_dir.display());
    Ok(())
}
