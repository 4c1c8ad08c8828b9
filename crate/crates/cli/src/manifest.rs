//! Run manifests: what was run, with which seeds, and a SHA-256 digest of
//! every file produced.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ini::Ini;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.ini";
pub const CONFIG_SNAPSHOT: &str = "config.ini";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects produced files and timings while a command runs.
#[derive(Debug)]
pub struct RunManifest {
    command: String,
    directory: PathBuf,
    config_text: String,
    seeds: Vec<(String, u64)>,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str, directory: &Path, config_text: String) -> Result<Self, CliError> {
        fs::create_dir_all(directory).map_err(|e| CliError::Io(format!("{}: {e}", directory.display())))?;
        Ok(Self {
            command: command.to_string(),
            directory: directory.to_path_buf(),
            config_text,
            seeds: Vec::new(),
            files: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.directory.join(name)
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.push((name.to_string(), value));
    }

    pub fn timing(&mut self, name: &str, seconds: f64) {
        self.timings.push((name.to_string(), seconds));
    }

    /// Writes `contents` into the run directory and records it.
    pub fn write_file(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.record(name);
        Ok(path)
    }

    /// Records a file already written into the run directory.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Writes the config snapshot and the manifest itself.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let snapshot = self.config_text.clone();
        self.write_file(CONFIG_SNAPSHOT, snapshot.as_bytes())?;
        let mut ini = Ini::new();
        ini.with_section(Some("run"))
            .set("command", &self.command)
            .set("version", env!("CARGO_PKG_VERSION"))
            .set("config", CONFIG_SNAPSHOT);
        for (name, value) in &self.seeds {
            ini.with_section(Some("seeds")).set(name, value.to_string());
        }
        let total = self.started.elapsed().as_secs_f64();
        for (name, seconds) in &self.timings {
            ini.with_section(Some("timings")).set(name, format!("{seconds:.3}"));
        }
        ini.with_section(Some("timings")).set("total", format!("{total:.3}"));
        for name in &self.files {
            let digest = sha256_file(&self.path(name))?;
            ini.with_section(Some("files")).set(name, digest);
        }
        let path = self.path(MANIFEST_FILE);
        ini.write_to_file(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
