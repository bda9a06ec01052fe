//! Result bundle: deterministic CSV/JSON artifacts plus a manifest that is
//! sufficient to reproduce them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Formats a float for CSV output with enough digits to round-trip.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else if v.is_infinite() {
        "-inf".into()
    } else {
        "nan".into()
    }
}

/// Accumulates artifacts under the output directory.
pub struct Bundle {
    dir: PathBuf,
    artifacts: Vec<String>,
    errors: Vec<(String, String)>,
}

impl Bundle {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new(), errors: Vec::new() })
    }

    /// Writes a CSV from a header and pre-formatted rows.
    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<()> {
        let mut text = String::with_capacity(rows.len() * 64 + header.len() + 1);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            writeln!(text, "{}", row.join(",")).unwrap();
        }
        self.write_raw(name, text.as_bytes())
    }

    /// Serializes a JSON artifact with stable formatting.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).context("serializing json artifact")?;
        self.write_raw(name, text.as_bytes())
    }

    pub fn write_raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Records a non-fatal per-cell failure.
    pub fn record_error(&mut self, context: impl Into<String>, error: impl Into<String>) {
        self.errors.push((context.into(), error.into()));
    }

    pub fn error_count(&self) -> usize {
        self.errors.len()
    }

    /// Writes errors.csv (when any) and the manifest; consumes the bundle.
    pub fn finish(mut self, subcommand: &str, config_text: &str, seed: u64) -> Result<()> {
        if !self.errors.is_empty() {
            let rows: Vec<Vec<String>> = self
                .errors
                .clone()
                .into_iter()
                .map(|(c, e)| vec![escape(&c), escape(&e)])
                .collect();
            self.write_csv("errors.csv", "context,error", &rows)?;
        }
        let manifest = Manifest {
            subcommand: subcommand.to_string(),
            config_sha256: hex_digest(config_text.as_bytes()),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            artifacts: self.artifacts.clone(),
            error_count: self.errors.len(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[derive(Debug, Serialize)]
struct Manifest {
    subcommand: String,
    config_sha256: String,
    seed: u64,
    version: String,
    created_unix: u64,
    artifacts: Vec<String>,
    error_count: usize,
}
