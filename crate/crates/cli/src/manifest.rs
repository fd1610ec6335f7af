//! Run manifests and per-artifact metadata sidecars.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    options: &'a Value,
    seed: Option<u64>,
    inputs: &'a [InputRecord],
    outputs: &'a [String],
    elapsed_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    artifact: &'a str,
    manifest: &'a str,
    command: &'a str,
    sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Collects the artifacts of one command and writes its manifest.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    options: Value,
    seed: Option<u64>,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn new(command: &'static str, out: &Path, options: Value, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|source| CliError::Write {
            path: out.to_path_buf(),
            source,
        })?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            options,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = read_bytes(path)?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes an artifact and its `<name>.meta.json` sidecar.
    pub fn artifact(&mut self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        write_file(&path, contents)?;
        let (columns, rows) = if name.ends_with(".csv") {
            let text = String::from_utf8_lossy(contents);
            let mut lines = text.lines();
            let columns = lines
                .next()
                .map(|h| h.split(',').map(str::to_string).collect::<Vec<_>>());
            (columns, Some(lines.count()))
        } else {
            (None, None)
        };
        let sidecar = Sidecar {
            artifact: name,
            manifest: MANIFEST_FILE,
            command: self.command,
            sha256: sha256_hex(contents),
            columns,
            rows,
        };
        let meta = serde_json::to_vec_pretty(&sidecar).expect("serializable");
        write_file(&self.out.join(format!("{name}.meta.json")), &meta)?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(self) -> CliResult<()> {
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            options: &self.options,
            seed: self.seed,
            inputs: &self.inputs,
            outputs: &self.outputs,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
        write_file(&self.out.join(MANIFEST_FILE), &bytes)
    }
}
