use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// JSON envelope written for every run.
#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub config: &'a C,
    pub result: R,
}

/// Files produced by one run, written only after all of them are ready.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn extend(&mut self, other: Outputs) {
        self.files.extend(other.files);
    }

    /// Refuses to replace existing files unless `force`.
    pub fn write(&self, dir: &Path, force: bool) -> CliResult<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let paths: Vec<PathBuf> = self.files.iter().map(|(n, _)| dir.join(n)).collect();
        if !force {
            if let Some(p) = paths.iter().find(|p| p.exists()) {
                return Err(CliError::invalid(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
        for (p, (_, contents)) in paths.iter().zip(&self.files) {
            std::fs::write(p, contents).map_err(|e| CliError::io(p, e))?;
        }
        Ok(paths)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| CliError::invalid(format!("serializing report: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

pub fn matrix_lines(s: &mut String, rows: &[Vec<f64>], indent: &str) {
    for row in rows {
        let parts: Vec<String> = row.iter().map(|v| format!("{v:>10.4}")).collect();
        let _ = writeln!(s, "{indent}{}", parts.join(" "));
    }
}
