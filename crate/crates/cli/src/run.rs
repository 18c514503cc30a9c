//! Run directories and manifests.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created: String,
    pub config_hash: String,
    pub seed: u64,
    /// Worker threads used; outputs do not depend on it.
    pub jobs: usize,
    pub config: serde_json::Map<String, serde_json::Value>,
    /// Input files by configuration key.
    pub inputs: Vec<(String, FileHash)>,
    /// SHA-256 of the canonical panel serialization, when a panel was read.
    pub panel_fingerprint: Option<String>,
    /// Artifacts relative to the run directory.
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// An output directory being filled by one command. Dropped without
/// [`Run::finish`], the directory is removed.
pub struct Run {
    pub dir: PathBuf,
    manifest: Manifest,
    finished: bool,
}

impl Drop for Run {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

impl Run {
    /// Creates `<output.dir>/<command>-<UTC timestamp>-<config hash prefix>`.
    pub fn create(cfg: &Config, command: &str) -> Result<Run, CliError> {
        let root = cfg.path("output.dir").ok_or_else(|| CliError::Usage("output.dir is required".into()))?;
        let now = chrono::Utc::now();
        let hash = cfg.hash();
        let stem = format!("{command}-{}-{}", now.format("%Y%m%dT%H%M%SZ"), &hash[..12]);
        let mut dir = root.join(&stem);
        let mut n = 1;
        while dir.exists() {
            dir = root.join(format!("{stem}-{n}"));
            n += 1;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let manifest = Manifest {
            tool: "sovrisk".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            created: now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config_hash: hash,
            seed: cfg.seed(),
            jobs: sovrisk::par::current_num_threads(),
            config: cfg.to_json(),
            inputs: Vec::new(),
            panel_fingerprint: None,
            outputs: Vec::new(),
        };
        Ok(Run { dir, manifest, finished: false })
    }

    pub fn record_input(&mut self, key: &str, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push((key.into(), FileHash { path: path.to_string_lossy().into_owned(), sha256 }));
        Ok(())
    }

    pub fn set_panel_fingerprint(&mut self, fp: String) {
        self.manifest.panel_fingerprint = Some(fp);
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes an artifact through `f` and records its hash.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        drop(w);
        self.manifest.outputs.push(FileHash { path: name.into(), sha256: sha256_file(&path)? });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Usage(e.to_string()))?;
            writeln!(w).map_err(|e| CliError::io(Path::new(name), e))
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write(name, |w| w.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new(name), e)))
    }

    /// Writes the manifest and returns the run directory.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Usage(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        self.finished = true;
        Ok(self.dir.clone())
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
