//! Run manifests: every command that writes result files first records what
//! produced them — the exact invocation, effective configuration, seeds, a
//! content hash of the input, the tool version, and timestamps. The manifest
//! is written before the results and finalized (with an end timestamp) after
//! they are on disk.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Subcommand that produced the results.
    pub command: String,
    /// Full argument vector as invoked.
    pub argv: Vec<String>,
    pub version: String,
    /// Master seed; every random stream in the run derives from it.
    pub seed: Option<u64>,
    /// SHA-256 of the raw input file bytes, when the command reads one.
    pub input_sha256: Option<String>,
    /// Effective configuration after flag/config-file resolution.
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: Option<String>,
}

impl RunManifest {
    pub fn start(
        command: &str,
        seed: Option<u64>,
        input_sha256: Option<String>,
        config: serde_json::Value,
    ) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            input_sha256,
            config,
            started_at: timestamp(),
            finished_at: None,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| anyhow::anyhow!("cannot serialize manifest: {e}"))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        Ok(())
    }

    /// Stamps the end time and rewrites the manifest.
    pub fn finish(&mut self, path: &Path) -> CliResult {
        self.finished_at = Some(timestamp());
        self.write(path)
    }
}

pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// `out.csv` → `out.csv.manifest.json`, next to the output file.
pub fn sibling_path(output: &Path) -> std::path::PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
