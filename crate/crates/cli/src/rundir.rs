use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use vesseldistill::synthdata::write_atomic;
use vesseldistill::Error;

use crate::{CliError, CliResult};

pub const LOCK_FILE: &str = ".vesseldistill.lock";

/// What must not already exist in the output directory (without `--force`).
pub enum Guard<'a> {
    /// The directory must be empty.
    Empty,
    /// None of these entries may exist.
    Entries(&'a [&'a str]),
}

/// Record of one invocation, written atomically when it ends.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub device: String,
    /// Every setting in `key = value` form, defaults included.
    pub resolved_config: String,
    /// Input files and directories, by role.
    pub inputs: Vec<(String, String)>,
    pub started_at: f64,
    pub finished_at: f64,
    pub artifacts: Vec<String>,
    pub exit_status: u8,
    pub error: Option<String>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Compute device from `VESSELDISTILL_DEVICE`; only the CPU is available.
pub fn device() -> CliResult<String> {
    match std::env::var("VESSELDISTILL_DEVICE") {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("cpu") => Ok("cpu".into()),
        Ok(v) => Err(CliError::Usage(format!(
            "VESSELDISTILL_DEVICE=`{v}` is not available; only `cpu` is supported"
        ))),
    }
}

/// A locked output directory. The lock is released on drop.
pub struct RunDir {
    pub path: PathBuf,
    manifest_name: &'static str,
    lock: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn open(path: &Path, force: bool, guard: Guard<'_>, manifest_name: &'static str, manifest: RunManifest) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        if !force {
            let clash = match guard {
                Guard::Empty => fs::read_dir(path)
                    .map_err(|e| Error::io(path, e))?
                    .next()
                    .is_some(),
                Guard::Entries(names) => names.iter().any(|n| path.join(n).exists()),
            };
            if clash {
                return Err(CliError::Usage(format!(
                    "output directory {} already holds results; pass --force to reuse it",
                    path.display()
                )));
            }
        }
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(CliError::Lib(Error::Data(format!(
                    "{} is locked by another run (delete {} if that run is gone)",
                    path.display(),
                    lock.display()
                ))))
            }
            Err(e) => return Err(Error::io(&lock, e).into()),
        }
        let mut manifest = manifest;
        manifest.started_at = unix_now();
        Ok(Self {
            path: path.to_path_buf(),
            manifest_name,
            lock,
            manifest,
        })
    }

    pub fn artifact(&mut self, rel: &str) {
        if self.path.join(rel).exists() {
            self.manifest.artifacts.push(rel.to_string());
        }
    }

    /// Writes the manifest with the outcome of `result` and passes it on.
    pub fn conclude<T>(mut self, result: CliResult<T>) -> CliResult<T> {
        self.manifest.finished_at = unix_now();
        match &result {
            Ok(_) => self.manifest.exit_status = 0,
            Err(e) => {
                self.manifest.exit_status = e.code();
                self.manifest.error = Some(e.to_string());
            }
        }
        let path = self.path.join(self.manifest_name);
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&path, &json)?;
        result
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn new_manifest(subcommand: &str, argv: &[String], device: String, resolved_config: String) -> RunManifest {
    RunManifest {
        subcommand: subcommand.to_string(),
        argv: argv.to_vec(),
        device,
        resolved_config,
        inputs: Vec::new(),
        started_at: 0.0,
        finished_at: 0.0,
        artifacts: Vec::new(),
        exit_status: 0,
        error: None,
    }
}
