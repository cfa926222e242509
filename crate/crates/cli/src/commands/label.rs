//! `adherence label`: apply an adherence definition to every patient with
//! more than one session and report the non-adherence prevalence.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use adherence_core::adherence::{label, AdherenceDefinition};

use crate::manifest::RunManifest;
use crate::{usage_error, CliResult, DefinitionArg, SpanConventionArg};
use crate::{out, outln};

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Sessions CSV (`patient_id,login,logout`, ISO-8601 UTC timestamps).
    #[arg(short, long, value_name = "FILE")]
    input: PathBuf,

    /// Threshold preset to start from.
    #[arg(long, value_enum, default_value = "original")]
    definition: DefinitionArg,

    /// Override: minimum span in days.
    #[arg(long, value_name = "DAYS")]
    span: Option<i64>,

    /// Override: minimum number of qualifying connections.
    #[arg(long, value_name = "N")]
    connections: Option<usize>,

    /// Override: a connection qualifies when strictly longer than this.
    #[arg(long, value_name = "SECONDS")]
    seconds: Option<i64>,

    /// How the span criterion counts days.
    #[arg(long, value_enum, default_value = "inclusive")]
    span_convention: SpanConventionArg,

    /// Write the label CSV here (prevalence summary goes to stdout);
    /// without it the CSV itself goes to stdout.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

fn effective_definition(args: &LabelArgs) -> Result<AdherenceDefinition, String> {
    let mut def = args.definition.definition();
    if let Some(span) = args.span {
        def.min_span_days = span;
    }
    if let Some(connections) = args.connections {
        def.min_connections = connections;
    }
    if let Some(seconds) = args.seconds {
        def.min_session_seconds = seconds;
    }
    if def.min_span_days < 1 || def.min_connections < 1 || def.min_session_seconds < 1 {
        return Err("adherence thresholds must all be at least 1".into());
    }
    Ok(def)
}

pub fn run(args: LabelArgs) -> CliResult {
    let def = match effective_definition(&args) {
        Ok(def) => def,
        Err(message) => return usage_error(message),
    };
    let convention = args.span_convention.convention();

    let loaded = crate::pipeline::load_sessions(&args.input)?;
    let kept = loaded.cohort.len();
    let total = loaded.total_patients;

    let mut csv = String::from("patient_id,adherent,qualifying_connections,span_days\n");
    let mut non_adherent = 0usize;
    let mut records: Vec<_> = loaded.cohort.records.iter().collect();
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    for record in records {
        let outcome = label(record, &def, convention);
        non_adherent += usize::from(!outcome.adherent);
        writeln!(
            csv,
            "{},{},{},{}",
            record.patient_id, outcome.adherent, outcome.qualifying_connections, outcome.span_days
        )
        .expect("writing to a String cannot fail");
    }

    let summary = format!(
        "kept {kept} of {total} patients with more than one connection; \
         {non_adherent}/{kept} non-adherent ({:.1}%)",
        100.0 * non_adherent as f64 / kept as f64
    );

    match &args.output {
        Some(path) => {
            let config = serde_json::json!({
                "definition": def,
                "span_convention": args.span_convention.convention(),
            });
            let mut manifest =
                RunManifest::start("label", None, Some(loaded.sha256.clone()), config);
            let manifest_path = crate::manifest::sibling_path(path);
            manifest.write(&manifest_path)?;
            crate::pipeline::write_file(path, &csv)?;
            manifest.finish(&manifest_path)?;
            outln!("{summary}");
        }
        None => {
            out!("{csv}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}
