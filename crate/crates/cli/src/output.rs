//! Run directories and their manifests.
//!
//! A run writes `manifest.json` with status `running` before any other
//! output and rewrites it as `complete` once every output is on disk, so a
//! directory whose manifest is missing or still `running` is incomplete.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    pub version: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration of the command.
    pub config: serde_json::Value,
    /// Inputs by role, e.g. `crimes` or `edges`.
    pub inputs: BTreeMap<String, FileDigest>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix_seconds: f64,
    pub elapsed_seconds: Option<f64>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<RunManifest, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::parse(&path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// An output directory being written.
pub struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl RunDir {
    /// Creates `dir`, digests the inputs and writes the `running` manifest.
    pub fn create(
        dir: &Path,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[(&str, &Path)],
    ) -> Result<RunDir, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let mut digests = BTreeMap::new();
        for &(role, path) in inputs {
            let abs = fs::canonicalize(path).map_err(|e| io_error(path, e))?;
            let sha256 = sha256_file(&abs)?;
            digests.insert(role.to_string(), FileDigest { path: abs, sha256 });
        }
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let run = RunDir {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                status: RunStatus::Running,
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config,
                inputs: digests,
                outputs: BTreeMap::new(),
                started_unix_seconds: started,
                elapsed_seconds: None,
            },
            clock: Instant::now(),
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn elapsed(&self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let tmp = self.dir.join(".manifest.json.tmp");
        write_atomic(&tmp, &self.path(MANIFEST), &json_bytes(&self.manifest)?)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.manifest
            .outputs
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, &json_bytes(value)?)
    }

    /// Renders into memory with `f`, then writes.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> areltrend::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.elapsed_seconds = Some(self.elapsed());
        self.write_manifest()
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn write_atomic(tmp: &Path, dest: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(tmp).map_err(|e| io_error(tmp, e))?;
    f.write_all(bytes).map_err(|e| io_error(tmp, e))?;
    f.sync_all().map_err(|e| io_error(tmp, e))?;
    fs::rename(tmp, dest).map_err(|e| io_error(dest, e))
}
