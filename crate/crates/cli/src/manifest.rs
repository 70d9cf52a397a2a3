use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub millis: f64,
    /// Items processed in the phase, for per-item amortization.
    pub items: usize,
}

/// Record of one artifact-producing command. Wall-clock timings live only
/// here so the artifacts themselves stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub dataset_hash: Option<String>,
    /// SHA-256 of every weights file read or written, keyed by role.
    pub weights_hash: BTreeMap<String, String>,
    pub version: String,
    /// Hash over the artifact table, stable for identical outputs.
    pub content_version: String,
    /// SHA-256 of each output file, keyed by path relative to the run dir.
    pub artifacts: BTreeMap<String, String>,
    pub timings: Vec<PhaseTiming>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(graspdiff::Error::MissingManifest(dir.display().to_string()).into());
        }
        Ok(serde_json::from_slice(&std::fs::read(&path).map_err(CliError::io(&path))?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(CliError::io(path))?))
}

/// Output directory plus the manifest being assembled for it.
pub struct Run {
    pub dir: PathBuf,
    pub dataset_hash: Option<String>,
    pub weights_hash: BTreeMap<String, String>,
    pub timings: Vec<PhaseTiming>,
}

impl Run {
    /// Creates `dir`, refusing a non-empty existing directory.
    pub fn create(dir: &Path) -> Result<Self> {
        if dir.exists() {
            let mut entries = std::fs::read_dir(dir).map_err(CliError::io(dir))?;
            if entries.next().is_some() {
                return Err(CliError::NotFresh(dir.to_path_buf()));
            }
        }
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Self { dir: dir.to_path_buf(), dataset_hash: None, weights_hash: BTreeMap::new(), timings: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(CliError::io(&path))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Runs `f` and records its wall-clock time.
    pub fn timed<T>(&mut self, phase: &str, items: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.push(PhaseTiming { phase: phase.to_string(), millis: start.elapsed().as_secs_f64() * 1e3, items });
        Ok(out)
    }

    pub fn record_weights(&mut self, role: &str, path: &Path) -> Result<()> {
        self.weights_hash.insert(role.to_string(), hash_file(path)?);
        Ok(())
    }

    /// Hashes every output file and writes the manifest.
    pub fn finish(self, command: String, config: serde_json::Value, seed: u64) -> Result<RunManifest> {
        let mut artifacts = BTreeMap::new();
        collect(&self.dir, &self.dir, &mut artifacts)?;
        let table: String = artifacts.iter().map(|(k, v)| format!("{v}  {k}\n")).collect();
        let manifest = RunManifest {
            command,
            config,
            seed,
            dataset_hash: self.dataset_hash,
            weights_hash: self.weights_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            content_version: sha256_hex(table.as_bytes()),
            artifacts,
            timings: self.timings,
        };
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(CliError::io(&path))?;
        Ok(manifest)
    }
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> =
        std::fs::read_dir(dir).map_err(CliError::io(dir))?.collect::<Result<_, _>>().map_err(CliError::io(dir))?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path != root.join(MANIFEST_FILE) {
            let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            out.insert(rel, hash_file(&path)?);
        }
    }
    Ok(())
}
