//! Artifact plumbing: every run writes the resolved config, a JSON manifest
//! and one or more CSV tables whose header comments carry the config hash,
//! so any table can be traced back to the exact inputs that produced it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct OutDir {
    dir: PathBuf,
    command: String,
    sha: String,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    outputs: &'a [String],
    config: BTreeMap<String, String>,
}

pub fn config_sha256(resolved: &str) -> String {
    let mut h = Sha256::new();
    h.update(resolved.as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl OutDir {
    pub fn create(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let resolved = cfg.to_flat();
        let sha = config_sha256(&resolved);
        let mut out = OutDir {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            sha,
            written: Vec::new(),
        };
        let mut f = File::create(out.dir.join("resolved.conf"))?;
        f.write_all(resolved.as_bytes())?;
        out.written.push("resolved.conf".to_string());
        Ok(out)
    }

    pub fn sha(&self) -> &str {
        &self.sha
    }

    /// Opens `name` and writes the traceability comment plus the CSV header
    /// row; rows then go through the returned writer (RFC 4180 quoting).
    pub fn csv(&mut self, name: &str, header: &[&str]) -> Result<csv::Writer<File>, CliError> {
        let mut f = File::create(self.dir.join(name))?;
        writeln!(f, "# nlthresh {}", self.command)?;
        writeln!(f, "# config-sha256: {}", self.sha)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header).map_err(csv_err)?;
        self.written.push(name.to_string());
        Ok(w)
    }

    /// Writes the manifest last so its output list is complete.
    pub fn finish(mut self, cfg: &ExperimentConfig) -> Result<(), CliError> {
        self.written.push("manifest.json".to_string());
        let manifest = Manifest {
            command: &self.command,
            config_sha256: &self.sha,
            seed: cfg.seed,
            outputs: &self.written,
            config: cfg.as_map(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Invalid(format!("manifest serialization failed: {e}")))?;
        let mut f = File::create(self.dir.join("manifest.json"))?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

pub fn csv_err(e: csv::Error) -> CliError {
    CliError::Invalid(format!("csv write failed: {e}"))
}

/// Empty string for None; CSV cells stay blank where a quantity does not
/// apply.
pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Positional in the human-readable range, scientific outside it. Both forms
/// round-trip through `str::parse::<f64>` and are deterministic.
pub fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && (v.abs() < 1e-4 || v.abs() >= 1e15) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}
