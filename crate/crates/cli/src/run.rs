//! Run directories: one lock per directory, the resolved config and the
//! seed log written next to the outputs.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::{ConfigError, RunConfig};

pub const LOCK: &str = ".lock";
pub const CONFIG: &str = "config.toml";
pub const SEEDS: &str = "seeds.log";

/// Another process holds the run directory.
#[derive(Debug, thiserror::Error)]
#[error("run directory {0} is locked by another process (remove {LOCK} if stale)")]
pub struct Locked(pub PathBuf);

pub struct RunDir {
    path: PathBuf,
    seeds: Vec<(String, u64)>,
}

impl RunDir {
    /// Creates (or, with `resume`, reopens) `path` and takes its lock.
    pub fn open(path: &Path, resume: bool) -> Result<Self> {
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Locked(path.to_path_buf()).into()),
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        let dir = Self {
            path: path.to_path_buf(),
            seeds: Vec::new(),
        };
        if !resume {
            let occupied = std::fs::read_dir(path)?.any(|e| e.map(|e| e.file_name() != LOCK).unwrap_or(true));
            if occupied {
                return Err(ConfigError(format!(
                    "run directory {} is not empty; pass --resume to continue it",
                    path.display()
                ))
                .into());
            }
        }
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        write(&self.file(CONFIG), cfg.to_toml()?.as_bytes())
    }

    /// Records a named seed for the seed log.
    pub fn seed(&mut self, name: &str, seed: u64) -> u64 {
        self.seeds.push((name.to_string(), seed));
        seed
    }

    pub fn write_seeds(&self) -> Result<()> {
        let mut s = String::from("stream\tseed\n");
        for (name, seed) in &self.seeds {
            writeln!(s, "{name}\t{seed}")?;
        }
        write(&self.file(SEEDS), s.as_bytes())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.path.join(LOCK));
    }
}

/// Write-then-rename so readers never observe partial files.
pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}
