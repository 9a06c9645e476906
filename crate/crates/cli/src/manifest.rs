use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<Artifact>,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Run {
    command: &'static str,
    started: Instant,
    started_unix_s: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().to_path_buf());
    }

    /// Writes `bytes` to `p` and records it as an output.
    pub fn write(&mut self, p: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        std::fs::write(p.as_ref(), bytes)?;
        self.outputs.push(p.as_ref().to_path_buf());
        Ok(())
    }

    /// Records a file some other code wrote.
    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().to_path_buf());
    }

    /// Hashes every output and writes the manifest to `path`.
    pub fn finish(self, path: impl AsRef<Path>, config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in self.outputs {
            let bytes = std::fs::read(&p)?;
            outputs.push(Artifact {
                sha256: sha256_hex(&bytes),
                path: p,
            });
        }
        let m = RunManifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            inputs: self.inputs,
            outputs,
            started_unix_s: self.started_unix_s,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}

/// `dir/manifest.json` for directory outputs, `file.manifest.json` next to file outputs.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
