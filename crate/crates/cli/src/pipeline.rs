//! Shared plumbing for commands that read a sessions CSV: loading and
//! validating the cohort, and carving out the exploration subset.

use std::path::Path;

use anyhow::Context;
use rand::seq::SliceRandom as _;

use adherence_core::adherence::filter_trivial;
use adherence_core::seeds;
use adherence_core::sessions::{build_cohort, parse_sessions, Cohort, Provenance};

use crate::{CliError, CliResult, InputArgs};

/// Seed-derivation tag for the exploration split; distinct from every tag the
/// core library uses, so the split never correlates with fold partitions or
/// weight initialization.
const TAG_EXPLORATION_SPLIT: u64 = 101;

pub struct LoadedSessions {
    /// Patients with more than one session, ready for the pipeline.
    pub cohort: Cohort,
    /// Patient count before the trivial-record filter.
    pub total_patients: usize,
    /// SHA-256 of the raw file bytes.
    pub sha256: String,
}

pub fn load_sessions(path: &Path) -> CliResult<LoadedSessions> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read sessions file `{}`", path.display()))?;
    let sha256 = crate::manifest::sha256_hex(text.as_bytes());
    let events = parse_sessions(&text)
        .with_context(|| format!("malformed sessions file `{}`", path.display()))?;
    let (cohort, warnings) = build_cohort(events, Provenance::Real);
    for warning in &warnings {
        eprintln!(
            "warning: patient {} has overlapping sessions (kept; daily totals are clamped)",
            warning.patient_id
        );
    }
    let total_patients = cohort.len();
    let cohort = filter_trivial(&cohort);
    if cohort.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "no patient in `{}` has more than one session",
            path.display()
        )));
    }
    Ok(LoadedSessions { cohort, total_patients, sha256 })
}

/// Splits the loaded cohort into (main, exploration) according to the
/// command-line flags. Without flags the exploration cohort is empty.
pub fn split_exploration(
    cohort: Cohort,
    args: &InputArgs,
    seed: u64,
) -> CliResult<(Cohort, Cohort)> {
    if let Some(path) = &args.exploration_ids {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read exploration id file `{}`", path.display()))?;
        let ids: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        if ids.is_empty() {
            return crate::usage_error(format!(
                "exploration id file `{}` lists no patients",
                path.display()
            ));
        }
        let (exploration, main, missing) = cohort.partition_by_ids(&ids);
        if !missing.is_empty() {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{} exploration id(s) not present in the input (after the >1-session filter): {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        if main.is_empty() {
            return crate::usage_error("exploration ids cover the whole cohort; nothing to test");
        }
        return Ok((main, exploration));
    }

    if let Some(n) = args.exploration_count {
        if n >= cohort.len() {
            return crate::usage_error(format!(
                "--exploration-count {n} must be smaller than the cohort ({} patients)",
                cohort.len()
            ));
        }
        let mut ids: Vec<String> = cohort.patient_ids().map(str::to_string).collect();
        ids.sort_unstable();
        let mut rng = seeds::rng_from(seed, &[TAG_EXPLORATION_SPLIT]);
        ids.shuffle(&mut rng);
        ids.truncate(n);
        let (exploration, main, _) = cohort.partition_by_ids(&ids);
        return Ok((main, exploration));
    }

    let provenance = cohort.provenance;
    Ok((cohort, Cohort { records: Vec::new(), provenance }))
}

/// Creates the output directory (and parents) if needed.
pub fn ensure_out_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory `{}`", path.display()))?;
    Ok(())
}

pub fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write `{}`", path.display()))?;
    Ok(())
}

pub fn to_pretty_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| anyhow::anyhow!("cannot serialize result: {e}"))?;
    Ok(text + "\n")
}
