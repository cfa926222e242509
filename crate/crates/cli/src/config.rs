//! Config-file support: a JSON object whose keys are long option names can
//! supply defaults for any subcommand. The file's options are injected into
//! the argument list right after the subcommand, so options typed on the
//! command line (which come later and override earlier occurrences) always
//! win.

use serde_json::Value;

const TOP_COMMANDS: [&str; 6] =
    ["simulate", "label", "train-eval", "ablate", "search", "predict"];
const ABLATE_KINDS: [&str; 3] = ["weighting", "fixed-length", "adherence-def"];

/// Rewrites `argv`, splicing in the options listed in the `--config` file (if
/// any). Returns an error message suitable for a usage failure (exit 2).
pub fn inject_config_tokens(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config file `{path}`: {e}"))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| format!("config file `{path}` is not valid JSON: {e}"))?;
    let Value::Object(entries) = value else {
        return Err(format!("config file `{path}` must contain a JSON object"));
    };

    let mut tokens = Vec::new();
    for (key, value) in entries {
        let flag = normalize_flag(&key)?;
        if flag == "--config" {
            return Err("config files cannot set --config themselves".into());
        }
        append_tokens(&mut tokens, &flag, value)?;
    }

    let at = insertion_point(&argv);
    let mut out = argv;
    out.splice(at..at, tokens);
    Ok(out)
}

/// Extracts the `--config` value without a full parse (the real parse happens
/// after injection).
fn config_path(argv: &[String]) -> Result<Option<String>, String> {
    let mut iter = argv.iter().enumerate();
    while let Some((i, token)) = iter.next() {
        if let Some(inline) = token.strip_prefix("--config=") {
            return Ok(Some(inline.to_string()));
        }
        if token == "--config" {
            return match argv.get(i + 1) {
                Some(path) => Ok(Some(path.clone())),
                None => Err("--config requires a file path".into()),
            };
        }
    }
    Ok(None)
}

fn normalize_flag(key: &str) -> Result<String, String> {
    let bare = key.trim_start_matches('-').replace('_', "-");
    if bare.is_empty() {
        return Err("config file contains an empty option name".into());
    }
    Ok(format!("--{bare}"))
}

fn append_tokens(tokens: &mut Vec<String>, flag: &str, value: Value) -> Result<(), String> {
    match value {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => tokens.push(flag.to_string()),
        Value::Number(n) => {
            tokens.push(flag.to_string());
            tokens.push(n.to_string());
        }
        Value::String(s) => {
            tokens.push(flag.to_string());
            tokens.push(s);
        }
        Value::Array(items) => {
            for item in items {
                match item {
                    Value::Array(_) | Value::Object(_) => {
                        return Err(format!("option `{flag}`: nested arrays/objects not allowed"))
                    }
                    other => append_tokens(tokens, flag, other)?,
                }
            }
        }
        Value::Object(_) => {
            return Err(format!("option `{flag}`: objects are not valid option values"))
        }
    }
    Ok(())
}

/// Index right after the (possibly nested) subcommand tokens, where injected
/// options still precede everything the user typed after the subcommand.
fn insertion_point(argv: &[String]) -> usize {
    let Some(top) = argv.iter().position(|t| TOP_COMMANDS.contains(&t.as_str())) else {
        return argv.len();
    };
    if argv[top] == "ablate" {
        if let Some(kind) = argv[top + 1..]
            .iter()
            .position(|t| ABLATE_KINDS.contains(&t.as_str()))
        {
            return top + 1 + kind + 1;
        }
    }
    top + 1
}
