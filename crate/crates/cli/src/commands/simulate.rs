//! `adherence simulate`: generate a synthetic login/logout cohort whose
//! ground-truth labels are known by construction.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use adherence_core::sessions::generate_synthetic_cohort;

use crate::manifest::RunManifest;
use crate::{usage_error, CliResult};
use crate::outln;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of patients following the adherent archetype.
    #[arg(long, value_name = "N")]
    adherent: usize,

    /// Number of patients following the dropout archetype.
    #[arg(long, value_name = "N")]
    dropout: usize,

    /// Days of simulated platform activity; must cover the 56-day
    /// adherence span.
    #[arg(long, default_value_t = 70, value_name = "DAYS")]
    horizon: u32,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path; a sibling `<FILE>.manifest.json` records the run.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

pub fn run(args: SimulateArgs) -> CliResult {
    if args.horizon < 56 {
        return usage_error(format!(
            "--horizon {} is shorter than the 56-day adherence span",
            args.horizon
        ));
    }

    let config = serde_json::json!({
        "adherent": args.adherent,
        "dropout": args.dropout,
        "horizon_days": args.horizon,
    });
    let mut manifest = RunManifest::start("simulate", Some(args.seed), None, config);
    let manifest_path = crate::manifest::sibling_path(&args.output);
    manifest.write(&manifest_path)?;

    let cohort = generate_synthetic_cohort(args.adherent, args.dropout, args.horizon, args.seed)
        .context("cohort generation failed")?;
    crate::pipeline::write_file(&args.output, &cohort.to_csv())?;

    manifest.finish(&manifest_path)?;
    outln!(
        "wrote {} patients ({} adherent, {} dropout) to {}",
        cohort.len(),
        args.adherent,
        args.dropout,
        args.output.display()
    );
    Ok(())
}
