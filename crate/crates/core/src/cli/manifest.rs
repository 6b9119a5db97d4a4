use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::io::{self, CsvOut};
use crate::error::Result;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config: &'a C,
    seed: Option<u64>,
    notes: &'a [String],
    inputs: &'a [InputDigest],
    outputs: &'a [String],
    warnings: &'a [String],
    duration_seconds: f64,
}

/// Bookkeeping for one subcommand invocation: output directory, input
/// digests, emitted files and warnings. Written out by [`RunLog::finish`].
pub struct RunLog {
    out: PathBuf,
    started: Instant,
    seed: Option<u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    warnings: Vec<String>,
    notes: Vec<String>,
}

impl RunLog {
    pub fn start(out: &Path) -> Result<Self> {
        io::ensure_dir(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            started: Instant::now(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = io::sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        eprintln!("warning: {message}");
        self.warnings.push(message);
    }

    pub fn note(&mut self, message: impl Into<String>) {
        self.notes.push(message.into());
    }

    pub fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvOut> {
        self.outputs.push(name.to_string());
        CsvOut::new(self.out.join(name), header)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.outputs.push(name.to_string());
        io::write_bytes(&self.out.join(name), body.as_bytes())
    }

    pub fn finish<C: Serialize>(self, subcommand: &str, config: &C) -> Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            config,
            seed: self.seed,
            notes: &self.notes,
            inputs: &self.inputs,
            outputs: &self.outputs,
            warnings: &self.warnings,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        body.push('\n');
        io::write_bytes(&self.out.join(MANIFEST_NAME), body.as_bytes())
    }
}
