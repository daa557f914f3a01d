//! Output directories that appear only when complete, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable naming the directory under which outputs are created
/// when `--out` is not given.
pub const OUTPUT_ROOT_ENV: &str = "ANMI_OUTPUT_ROOT";

pub fn resolve_output(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
        root.join(name)
    })
}

/// A sibling temp directory that is renamed onto the target on commit and
/// removed if dropped uncommitted.
pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn new(target: &Path, force: bool) -> Result<Self, String> {
        if target.exists() && !force {
            return Err(format!(
                "output directory {} already exists; pass --force to replace it",
                target.display()
            ));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
        let name = target
            .file_name()
            .ok_or_else(|| format!("{} is not a directory name", target.display()))?
            .to_string_lossy();
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| format!("cannot clear {}: {e}", staging.display()))?;
        }
        fs::create_dir(&staging).map_err(|e| format!("cannot create {}: {e}", staging.display()))?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn commit(mut self) -> Result<PathBuf, String> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)
                .map_err(|e| format!("cannot replace {}: {e}", self.target.display()))?;
        }
        fs::rename(&self.staging, &self.target)
            .map_err(|e| format!("cannot move output into {}: {e}", self.target.display()))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Wall-clock time of each phase, in order.
#[derive(Default)]
pub struct Timings {
    phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the resolved configuration's JSON bytes.
    pub config_digest: String,
    pub seeds: serde_json::Value,
    pub version: String,
    pub timings_seconds: BTreeMap<String, f64>,
    pub phase_order: Vec<String>,
}

impl RunManifest {
    pub fn new(config_bytes: &[u8], seeds: serde_json::Value, timings: Timings) -> Self {
        Self {
            command_line: std::env::args().collect(),
            config_digest: sha256_hex(config_bytes),
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            phase_order: timings.phases.iter().map(|(p, _)| p.clone()).collect(),
            timings_seconds: timings.phases.into_iter().collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), String> {
        let path = dir.join("run_manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| e.to_string())?;
        fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
    }
}
