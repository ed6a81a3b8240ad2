//! Per-command run manifests.
//!
//! `manifest.txt` in the output directory is written with `status: running`
//! before a command does any work and rewritten when it ends, with output
//! hashes and wall-clock time on success or the error on failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use embdistill::data::write_atomic;
use embdistill::pipeline::Manifest;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    /// Creates `dir`, hashes `inputs`, and writes the opening manifest.
    pub fn begin(command: &str, settings: &Settings, dir: &Path, inputs: &[(&str, &Path)]) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let mut m = Manifest::new();
        m.set("command", command);
        m.set("status", "running");
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        m.set("started_unix", started);
        m.set("seed", settings.raw("seed"));
        for (k, v) in settings.entries() {
            m.set(&format!("config.{k}"), v);
        }
        let mut run = Run { dir: dir.to_path_buf(), manifest: m, outputs: Vec::new(), start: Instant::now() };
        for (name, path) in inputs {
            run.manifest.set(&format!("input.{name}"), path.display());
            match file_hash(path) {
                Ok(h) => run.manifest.set(&format!("input.{name}.sha256"), h),
                Err(e) => return run.finish(Err(e)),
            }
        }
        run.manifest.save(dir.join(MANIFEST))?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a text artifact and records it as an output.
    pub fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        write_atomic(&path, text.as_bytes())?;
        self.outputs.push(path);
        Ok(())
    }

    /// Records an artifact written by other means.
    pub fn record(&mut self, name: &str) {
        self.outputs.push(self.path(name));
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.set(key, value);
    }

    /// Rewrites the manifest with the outcome of `result`.
    pub fn finish<T>(mut self, result: Result<T, CliError>) -> Result<T, CliError> {
        match &result {
            Ok(_) => {
                for path in &self.outputs {
                    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                    self.manifest.set(&format!("output.{name}"), path.display());
                    self.manifest.set(&format!("output.{name}.sha256"), file_hash(path)?);
                }
                self.manifest.set("status", "done");
            }
            Err(e) => {
                self.manifest.set("status", "failed");
                self.manifest.set("error", e.to_string().replace('\n', " "));
            }
        }
        self.manifest.set("wall_clock_seconds", format!("{:.3}", self.start.elapsed().as_secs_f64()));
        self.manifest.save(self.dir.join(MANIFEST))?;
        result
    }
}
