//! Record of one CLI invocation, written into the output directory when the
//! command finishes.
//!
//! Metadata lines are comments, so the manifest of a `train` run is itself a
//! config file that reproduces the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "run_manifest.cfg";

pub struct RunManifest {
    command: &'static str,
    seed: Option<u64>,
    started: u64,
    notes: Vec<(String, String)>,
    artifacts: Vec<PathBuf>,
    config: Option<String>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn start(command: &'static str, seed: Option<u64>) -> Self {
        Self {
            command,
            seed,
            started: unix_now(),
            notes: Vec::new(),
            artifacts: Vec::new(),
            config: None,
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn artifact(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    pub fn config(&mut self, text: String) {
        self.config = Some(text);
    }

    /// Writes `run_manifest.cfg` via a temporary file and rename.
    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let mut s = String::from("# voxprofile run manifest\n");
        writeln!(s, "# command: {}", self.command)?;
        if let Some(seed) = self.seed {
            writeln!(s, "# seed: {seed}")?;
        }
        writeln!(s, "# started_unix: {}", self.started)?;
        writeln!(s, "# finished_unix: {}", unix_now())?;
        for (k, v) in &self.notes {
            writeln!(s, "# {k}: {v}")?;
        }
        for a in &self.artifacts {
            writeln!(s, "# artifact: {} sha256={}", a.display(), sha256_file(a)?)?;
        }
        if let Some(cfg) = &self.config {
            s.push_str(cfg);
        }
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let path = out_dir.join(FILE_NAME);
        let tmp = out_dir.join(format!("{FILE_NAME}.tmp"));
        fs::write(&tmp, s).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
