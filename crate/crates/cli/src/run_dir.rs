//! Run directories and their manifest of inputs and artifact checksums.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub artifacts: Vec<Artifact>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    input: PathBuf,
    started: f64,
}

impl RunDir {
    pub fn create(path: &Path, command: &str, config_path: Option<&Path>, seed: Option<u64>, input: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            input: input.to_path_buf(),
            started: unix_now(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    /// Checksums every regular file in the directory and writes the manifest.
    pub fn finish(self) -> Result<()> {
        let mut names: Vec<String> = fs::read_dir(&self.path)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != RUN_MANIFEST)
            .collect();
        names.sort();
        let mut artifacts = Vec::with_capacity(names.len());
        for file in names {
            let bytes = fs::read(self.path.join(&file))?;
            artifacts.push(Artifact {
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
                file,
            });
        }
        let manifest = RunManifest {
            command: self.command.clone(),
            argv: std::env::args().collect(),
            config_path: self.config_path.clone(),
            seed: self.seed,
            input: self.input.clone(),
            output_dir: self.path.clone(),
            started_unix: self.started,
            finished_unix: unix_now(),
            artifacts,
        };
        self.write_json(RUN_MANIFEST, &manifest)
    }
}
