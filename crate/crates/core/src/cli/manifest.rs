//! Replay record written at the start of every command and completed with
//! output checksums at the end.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::kv::KvMap;

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub seed: u64,
    pub config: KvMap,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

/// Regular files under `path` (itself if it is a file), sorted, non-recursive.
pub fn expand(path: &Path) -> Vec<PathBuf> {
    if path.is_file() {
        return vec![path.to_path_buf()];
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect())
        .unwrap_or_default();
    files.sort();
    files
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl RunManifest {
    fn render(&self, with_outputs: bool, skip: &Path) -> std::io::Result<String> {
        let mut m = KvMap::new();
        m.set("command", self.command.join(" "));
        m.set("seed", self.seed);
        m.set("png.scaling", "per-image min-max to 0..255");
        for (k, v) in self.config.iter() {
            m.set(format!("config.{k}"), v);
        }
        let mut n = 0;
        for root in &self.inputs {
            m.set(format!("input.{n}"), root.display());
            n += 1;
        }
        for (i, f) in self.inputs.iter().flat_map(|p| expand(p)).enumerate() {
            m.set(format!("checksum.input.{i}"), format!("{} {}", sha256_file(&f)?, f.display()));
        }
        for (i, root) in self.outputs.iter().enumerate() {
            m.set(format!("output.{i}"), root.display());
        }
        if with_outputs {
            let files = self.outputs.iter().flat_map(|p| expand(p)).filter(|f| f != skip);
            for (i, f) in files.enumerate() {
                m.set(format!("checksum.output.{i}"), format!("{} {}", sha256_file(&f)?, f.display()));
            }
        }
        Ok(m.to_text())
    }

    /// Initial record, before any output exists.
    pub fn write_initial(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render(false, path)?)
    }

    /// Rewrites the record with checksums of everything produced.
    pub fn write_final(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.render(true, path)?)
    }
}
