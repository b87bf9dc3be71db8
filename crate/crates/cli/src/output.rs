//! Output directory handling: payload files plus a manifest that holds
//! everything run-specific (config hash, timings, thread count).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Timings {
    started_unix_s: f64,
    elapsed_s: f64,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: Option<u64>,
    threads: usize,
    config: &'a C,
    outputs: Vec<OutputEntry>,
    timings: Timings,
}

/// Collects the payload files of one command run.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<OutputEntry>,
    pub trace: bool,
}

impl OutDir {
    pub fn create(dir: &Path, trace: bool) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new(), trace })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.written.push(OutputEntry { file: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    /// Writes rows serialized with the `csv` crate; headers come from the
    /// row type's field names.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for r in rows {
            wtr.serialize(r)?;
        }
        let bytes = wtr.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.write_bytes(name, &bytes)
    }

    /// Progress line on stderr when tracing is enabled.
    pub fn note(&self, msg: &str) {
        if self.trace {
            eprintln!("[trace] {msg}");
        }
    }

    pub fn finish<C: Serialize>(
        self,
        command: &str,
        config: &C,
        seed: Option<u64>,
        started: SystemTime,
        elapsed: Duration,
    ) -> Result<(), CliError> {
        let canonical = serde_json::to_vec(config).map_err(|e| CliError::Config(e.to_string()))?;
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(&canonical),
            seed,
            threads: rayon::current_num_threads(),
            config,
            outputs: self.written,
            timings: Timings {
                started_unix_s: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
                elapsed_s: elapsed.as_secs_f64(),
            },
        };
        let s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(self.dir.join(MANIFEST), s + "\n")?;
        Ok(())
    }
}
