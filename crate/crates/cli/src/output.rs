use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

/// Files are written into a hidden directory under `out` and moved into
/// place only by [`Staging::commit`]; dropping without committing leaves
/// `out` untouched.
pub struct Staging {
    out: PathBuf,
    dir: TempDir,
    entries: Vec<String>,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self> {
        if !out.is_dir() {
            bail!("output directory {} does not exist", out.display());
        }
        let dir = tempfile::Builder::new()
            .prefix(".ccaboot-staging-")
            .tempdir_in(out)
            .with_context(|| format!("output directory {} is not writable", out.display()))?;
        Ok(Staging { out: out.to_path_buf(), dir, entries: Vec::new() })
    }

    fn register(&mut self, name: &str) -> PathBuf {
        let top = name.split('/').next().unwrap_or(name).to_string();
        if !self.entries.contains(&top) {
            self.entries.push(top);
        }
        self.dir.path().join(name)
    }

    /// Write a file at `name` (may contain `/`) through `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.register(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// A directory to fill through other APIs.
    pub fn subdir(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.register(name);
        fs::create_dir_all(&path)?;
        Ok(path)
    }

    /// Top-level names written so far.
    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn commit(self) -> Result<Vec<String>> {
        for name in &self.entries {
            let from = self.dir.path().join(name);
            let to = self.out.join(name);
            if to.is_dir() {
                fs::remove_dir_all(&to)?;
            }
            fs::rename(&from, &to).with_context(|| format!("cannot move {name} into {}", self.out.display()))?;
        }
        Ok(self.entries)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_bytes(path: &Path, bytes: &[u8]) -> InputDigest {
    InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(bytes)) }
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(digest_bytes(path, &bytes))
}

/// Everything needed to rerun a command. The worker count and the output
/// location are deliberately absent so that reruns compare byte for byte.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub settings: &'a S,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl<'a, S: Serialize> Manifest<'a, S> {
    pub fn new(command: &'static str, seed: Option<u64>, settings: &'a S, inputs: Vec<InputDigest>, mut outputs: Vec<String>) -> Self {
        outputs.sort();
        Manifest { tool: "ccaboot", version: env!("CARGO_PKG_VERSION"), command, seed, settings, inputs, outputs }
    }
}
