//! Black-box tests of the `adherence` binary: exit codes, flag validation,
//! output files, config-file layering, and pipe behavior. Every test works
//! in its own temporary directory on a small simulated cohort so the whole
//! file stays fast.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_adherence")
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_in(dir: &Path, args: &[&str]) -> Run {
    let output = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary starts");
    Run {
        code: output.status.code().expect("no signal"),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

fn expect_ok(dir: &Path, args: &[&str]) -> Run {
    let run = run_in(dir, args);
    assert_eq!(run.code, 0, "adherence {args:?} failed:\n{}", run.stderr);
    run
}

/// 8 adherent + 8 dropout patients, ids a00001.. and d00001.. — balanced so
/// even 2-fold partitions keep both classes on each side of every split.
fn simulate_cohort(dir: &Path, seed: &str) {
    expect_ok(
        dir,
        &["simulate", "--adherent", "8", "--dropout", "8", "--seed", seed, "-o", "cohort.csv"],
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap())
        .unwrap_or_else(|e| panic!("{} is not valid JSON: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn simulate_is_deterministic_and_validates_flags() {
    let dir = tempfile::tempdir().unwrap();
    expect_ok(dir.path(), &["simulate", "--adherent", "3", "--dropout", "2", "--seed", "8", "-o", "one.csv"]);
    expect_ok(dir.path(), &["simulate", "--adherent", "3", "--dropout", "2", "--seed", "8", "-o", "two.csv"]);
    let one = std::fs::read(dir.path().join("one.csv")).unwrap();
    let two = std::fs::read(dir.path().join("two.csv")).unwrap();
    assert_eq!(one, two, "same seed must write identical cohorts");

    expect_ok(dir.path(), &["simulate", "--adherent", "3", "--dropout", "2", "--seed", "9", "-o", "three.csv"]);
    let three = std::fs::read(dir.path().join("three.csv")).unwrap();
    assert_ne!(one, three, "different seeds must differ");

    let manifest = read_json(&dir.path().join("one.csv.manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert!(manifest["finished_at"].is_string(), "manifest must be finalized");
    assert_eq!(manifest["seed"], 8);

    // A horizon shorter than the adherence window cannot produce planted
    // labels; negative counts never parse.
    assert_eq!(run_in(dir.path(), &["simulate", "--adherent", "3", "--dropout", "2", "--horizon", "55", "-o", "x.csv"]).code, 2);
    assert_eq!(run_in(dir.path(), &["simulate", "--adherent", "-1", "-o", "x.csv"]).code, 2);
}

// ---------------------------------------------------------------------------
// label
// ---------------------------------------------------------------------------

#[test]
fn label_prints_sorted_rows_and_a_prevalence_summary() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");

    let run = expect_ok(dir.path(), &["label", "-i", "cohort.csv"]);
    let lines: Vec<&str> = run.stdout.lines().collect();
    assert_eq!(lines[0], "patient_id,adherent,qualifying_connections,span_days");
    assert_eq!(lines.len(), 17, "16 patients plus the header");
    let mut ids: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    let sorted = {
        let mut s = ids.clone();
        s.sort();
        s
    };
    assert_eq!(ids, sorted, "rows must be sorted by patient id");
    ids.dedup();
    assert_eq!(ids.len(), 16);
    assert!(
        run.stderr.contains("kept 16 of 16"),
        "summary goes to stderr in stdout-CSV mode: {}",
        run.stderr
    );

    // File mode: summary moves to stdout and a manifest appears.
    let run = expect_ok(dir.path(), &["label", "-i", "cohort.csv", "--definition", "alt-b", "-o", "labels.csv"]);
    assert!(run.stdout.contains("kept 16 of 16"));
    assert!(dir.path().join("labels.csv").is_file());
    assert!(dir.path().join("labels.csv.manifest.json").is_file());

    // The weakest legal thresholds call everyone who ever connected adherent.
    let run = expect_ok(
        dir.path(),
        &["label", "-i", "cohort.csv", "--connections", "1", "--seconds", "1", "--span", "1"],
    );
    assert!(
        run.stderr.contains("0/16 non-adherent"),
        "degenerate definition must keep everyone adherent: {}",
        run.stderr
    );

    // Zero thresholds are usage errors; missing input is a runtime one.
    assert_eq!(run_in(dir.path(), &["label", "-i", "cohort.csv", "--connections", "0"]).code, 2);
    assert_eq!(run_in(dir.path(), &["label", "-i", "nowhere.csv"]).code, 1);
}

// ---------------------------------------------------------------------------
// train-eval
// ---------------------------------------------------------------------------

#[test]
fn train_eval_writes_the_fixed_report_files() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");

    // Single-length protocol: day 9 is not a reporting day, so no confusion
    // or precision-recall files may appear.
    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--fixed-length", "9", "--runs", "2",
            "--folds", "2", "--max-epochs", "1", "--out-dir", "nine",
        ],
    );
    let nine = dir.path().join("nine");
    let series = std::fs::read_to_string(nine.join("day_series.csv")).unwrap();
    let lines: Vec<&str> = series.lines().collect();
    assert_eq!(lines[0], "day,mean_balanced_accuracy,ci_lower,ci_upper");
    assert_eq!(lines.len(), 2, "one scored day expected");
    assert!(lines[1].starts_with("9,"));
    let thresholds = read_json(&nine.join("thresholds.json"));
    assert_eq!(thresholds.as_array().unwrap().len(), 3);
    let manifest = read_json(&nine.join("manifest.json"));
    assert!(manifest["finished_at"].is_string());
    assert!(manifest["input_sha256"].is_string());
    let leftovers: Vec<String> = std::fs::read_dir(&nine)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("confusion_") || n.starts_with("pr_"))
        .collect();
    assert!(leftovers.is_empty(), "unexpected reporting files: {leftovers:?}");
    assert!(!nine.join("models").exists(), "no checkpoints without --save-models");

    // Full prefix range: the reporting days 7..42 all get their files.
    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--runs", "2", "--folds", "2",
            "--max-epochs", "1", "--out-dir", "full",
        ],
    );
    let full = dir.path().join("full");
    let series = std::fs::read_to_string(full.join("day_series.csv")).unwrap();
    assert_eq!(series.lines().count(), 37, "header plus days 7..=42");
    for day in [7, 11, 20, 42] {
        assert!(full.join(format!("confusion_day{day}.json")).is_file());
        assert!(full.join(format!("pr_day{day}.json")).is_file());
    }

    // Invalid protocols are usage errors; a missing input is a runtime error.
    assert_eq!(run_in(dir.path(), &["train-eval", "-i", "cohort.csv", "--folds", "1"]).code, 2);
    assert_eq!(run_in(dir.path(), &["train-eval", "-i", "cohort.csv", "--fixed-length", "50"]).code, 2);
    assert_eq!(run_in(dir.path(), &["train-eval", "-i", "nowhere.csv"]).code, 1);
}

#[test]
fn dump_features_and_pool_folds_variants() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");
    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--fixed-length", "9", "--runs", "2",
            "--folds", "2", "--max-epochs", "1", "--dump-features", "--pool-folds", "after",
            "--out-dir", "rep",
        ],
    );
    let rep = dir.path().join("rep");
    let features = std::fs::read_to_string(rep.join("features.csv")).unwrap();
    let lines: Vec<&str> = features.lines().collect();
    assert_eq!(lines[0], "patient_id,day,logged_in,logged_seconds");
    assert_eq!(lines.len(), 1 + 16 * 42, "one row per patient and day");
    assert!(lines[1].starts_with("a00001,1,"));
    let manifest = read_json(&rep.join("manifest.json"));
    assert_eq!(manifest["config"]["pool_folds"], "balanced_accuracy_after");

    assert_eq!(
        run_in(dir.path(), &["train-eval", "-i", "cohort.csv", "--pool-folds", "sideways"]).code,
        2
    );
}

// ---------------------------------------------------------------------------
// config file
// ---------------------------------------------------------------------------

#[test]
fn config_file_supplies_flags_and_the_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");
    std::fs::write(
        dir.path().join("cfg.json"),
        // Underscored keys and boolean flags must work too.
        r#"{"fixed-length": 9, "runs": 2, "folds": 2, "max_epochs": 1, "dump-features": true}"#,
    )
    .unwrap();

    expect_ok(
        dir.path(),
        &["train-eval", "-i", "cohort.csv", "--seed", "4", "--config", "cfg.json", "--out-dir", "from_config"],
    );
    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--seed", "4", "--fixed-length", "9", "--runs", "2",
            "--folds", "2", "--max-epochs", "1", "--dump-features", "--out-dir", "from_flags",
        ],
    );
    let a = std::fs::read(dir.path().join("from_config/day_series.csv")).unwrap();
    let b = std::fs::read(dir.path().join("from_flags/day_series.csv")).unwrap();
    assert_eq!(a, b, "config-fed flags must behave exactly like typed flags");
    assert!(dir.path().join("from_config/features.csv").is_file(), "boolean config flag ignored");

    // Explicit flags override config values; the manifest records the result.
    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--seed", "4", "--config", "cfg.json",
            "--runs", "1", "--max-epochs", "2", "--out-dir", "override",
        ],
    );
    let manifest = read_json(&dir.path().join("override/manifest.json"));
    assert_eq!(manifest["config"]["cv"]["n_runs"], 1);
    assert_eq!(manifest["config"]["cv"]["train"]["max_epochs"], 2);

    // Unknown keys surface as ordinary argument errors; broken JSON is a
    // usage error as well.
    std::fs::write(dir.path().join("bad_key.json"), r#"{"no-such-flag": 1}"#).unwrap();
    assert_eq!(
        run_in(dir.path(), &["train-eval", "-i", "cohort.csv", "--config", "bad_key.json"]).code,
        2
    );
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    assert_eq!(
        run_in(dir.path(), &["train-eval", "-i", "cohort.csv", "--config", "broken.json"]).code,
        2
    );
}

// ---------------------------------------------------------------------------
// exploration split
// ---------------------------------------------------------------------------

#[test]
fn exploration_split_is_validated_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");

    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--exploration-count", "4", "--fixed-length", "9",
            "--runs", "2", "--folds", "2", "--max-epochs", "1", "--out-dir", "split",
        ],
    );
    let listed = std::fs::read_to_string(dir.path().join("split/exploration_ids.txt")).unwrap();
    let ids: Vec<&str> = listed.lines().collect();
    assert_eq!(ids.len(), 4);
    let cohort = std::fs::read_to_string(dir.path().join("cohort.csv")).unwrap();
    for id in &ids {
        assert!(cohort.contains(id), "exploration id {id} is not a cohort patient");
    }

    // Unknown ids in the list are runtime errors and name the culprit.
    std::fs::write(dir.path().join("ids.txt"), "a00001\nzz999\n").unwrap();
    let run = run_in(
        dir.path(),
        &["train-eval", "-i", "cohort.csv", "--exploration-ids", "ids.txt"],
    );
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("zz999"), "error must name the missing id: {}", run.stderr);

    // Swallowing the whole cohort leaves nothing to evaluate: usage error.
    assert_eq!(
        run_in(dir.path(), &["train-eval", "-i", "cohort.csv", "--exploration-count", "16"]).code,
        2
    );
    // The two split flags are mutually exclusive.
    assert_eq!(
        run_in(
            dir.path(),
            &["train-eval", "-i", "cohort.csv", "--exploration-count", "4", "--exploration-ids", "ids.txt"],
        )
        .code,
        2
    );
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[test]
fn predict_scores_patients_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");
    expect_ok(
        dir.path(),
        &[
            "train-eval", "-i", "cohort.csv", "--fixed-length", "9", "--runs", "1",
            "--folds", "2", "--max-epochs", "1", "--save-models", "--out-dir", "m",
        ],
    );
    let model = "m/models/run00_fold00.json";
    assert!(dir.path().join(model).is_file());

    let run = expect_ok(
        dir.path(),
        &["predict", "--model", model, "-i", "cohort.csv", "--patient", "a00001"],
    );
    let lines: Vec<&str> = run.stdout.lines().collect();
    assert_eq!(lines[0], "day,p_dropout");
    assert_eq!(lines.len(), 37, "days 7..=42 each get a probability");
    for line in &lines[1..] {
        let p: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p), "probability out of range: {line}");
    }

    let run = expect_ok(
        dir.path(),
        &["predict", "--model", model, "-i", "cohort.csv", "--patient", "a00001", "--day", "9"],
    );
    let p: f64 = run.stdout.trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&p));

    // Out-of-range days are usage errors; unknown patients and junk model
    // files are runtime errors.
    for day in ["3", "43"] {
        assert_eq!(
            run_in(dir.path(), &["predict", "--model", model, "-i", "cohort.csv", "--patient", "a00001", "--day", day]).code,
            2
        );
    }
    assert_eq!(
        run_in(dir.path(), &["predict", "--model", model, "-i", "cohort.csv", "--patient", "ghost"]).code,
        1
    );
    std::fs::write(dir.path().join("junk.json"), "not a checkpoint").unwrap();
    assert_eq!(
        run_in(dir.path(), &["predict", "--model", "junk.json", "-i", "cohort.csv", "--patient", "a00001"]).code,
        1
    );
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

#[test]
fn search_ranks_candidates_on_the_exploration_cohort() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");
    expect_ok(
        dir.path(),
        &[
            "search", "-i", "cohort.csv", "--candidates", "2", "--max-epochs", "1",
            "--seed", "1", "--out-dir", "s",
        ],
    );
    let outcome = read_json(&dir.path().join("s/leaderboard.json"));
    let board = outcome["leaderboard"].as_array().unwrap();
    assert_eq!(board.len(), 2);
    let scores: Vec<f64> = board.iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores[0] >= scores[1], "leaderboard must be sorted best first");

    assert_eq!(run_in(dir.path(), &["search", "-i", "cohort.csv", "--candidates", "0"]).code, 2);
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[test]
fn ablate_weighting_compares_two_arms() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");
    let run = expect_ok(
        dir.path(),
        &[
            "ablate", "weighting", "-i", "cohort.csv", "--runs", "2", "--folds", "2",
            "--max-epochs", "1", "--out-dir", "ab",
        ],
    );
    assert!(run.stdout.contains("Mann-Whitney U"), "verdict line missing: {}", run.stdout);
    let ab = dir.path().join("ab");
    for name in ["baseline_day_series.csv", "variant_day_series.csv", "mwu.json", "ablation.json", "manifest.json"] {
        assert!(ab.join(name).is_file(), "missing {name}");
    }
    let mwu = read_json(&ab.join("mwu.json"));
    let u = mwu["u"].as_f64().unwrap();
    let p = mwu["p_value"].as_f64().unwrap();
    assert!(u >= 0.0);
    assert!(p > 0.0 && p <= 1.0, "p-value out of range: {p}");

    // Out-of-range fixed lengths are rejected before any training starts.
    assert_eq!(
        run_in(dir.path(), &["ablate", "fixed-length", "50", "-i", "cohort.csv"]).code,
        2
    );
}

// ---------------------------------------------------------------------------
// process behavior
// ---------------------------------------------------------------------------

#[test]
fn closed_pipes_and_job_flags_behave() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cohort(dir.path(), "3");

    // Writing into a pipe the reader already closed is not an error.
    let status = Command::new("bash")
        .args(["-c", &format!("set -o pipefail; {} label -i cohort.csv 2>/dev/null | head -n 1 > /dev/null", bin())])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(status.success(), "pipeline exit {status:?}");

    // Worker-count plumbing: zero is rejected, explicit and env-provided
    // counts are accepted.
    assert_eq!(run_in(dir.path(), &["--jobs", "0", "label", "-i", "cohort.csv"]).code, 2);
    assert_eq!(run_in(dir.path(), &["--jobs", "2", "label", "-i", "cohort.csv"]).code, 0);
    let output = Command::new(bin())
        .args(["label", "-i", "cohort.csv"])
        .env("ADHERENCE_JOBS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
}
