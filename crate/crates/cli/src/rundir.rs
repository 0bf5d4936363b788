//! Run directories: artifacts, the effective config and a content-hash manifest.

use std::fs;
use std::path::{Path, PathBuf};

use narrate::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.txt";

/// Output directory owned by one subcommand. Creating it clears any previous contents.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, name: &str) -> Result<RunDir> {
        let path = root.join(name);
        if path.exists() {
            fs::remove_dir_all(&path)?;
        }
        fs::create_dir_all(&path)?;
        Ok(RunDir {
            path,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.path.join(name), bytes)?;
        self.record(name);
        Ok(())
    }

    /// Register a file written directly into the directory.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Write the effective config and the manifest. `note` lines are emitted as `#` comments.
    pub fn finish(mut self, config: &RunConfig, note: Option<&str>) -> Result<PathBuf> {
        self.write(CONFIG, config.to_text())?;
        self.files.sort();
        let mut manifest = String::new();
        if let Some(n) = note {
            manifest.push_str(&format!("# {n}\n"));
        }
        for f in &self.files {
            let bytes = fs::read(self.path.join(f))?;
            manifest.push_str(&format!("{}  {f}\n", hex::encode(Sha256::digest(&bytes))));
        }
        fs::write(self.path.join(MANIFEST), manifest)?;
        Ok(self.path)
    }
}

/// Path of an upstream artifact, or an error naming the subcommand that produces it.
pub fn require(root: &Path, dir: &str, file: &str, subcommand: &str) -> Result<PathBuf> {
    let path = root.join(dir).join(file);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path: path.display().to_string(),
            subcommand: subcommand.to_string(),
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<String> {
    Ok(fs::read_to_string(dir.join(MANIFEST))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_hashes_sorted_files() {
        let root = tempfile::tempdir().unwrap();
        let mut d = RunDir::create(root.path(), "x").unwrap();
        d.write("b.txt", "bee").unwrap();
        d.write("a.txt", "").unwrap();
        let path = d.finish(&RunConfig::default(), Some("note")).unwrap();
        let m = read_manifest(&path).unwrap();
        let lines: Vec<&str> = m.lines().collect();
        assert_eq!(lines[0], "# note");
        assert_eq!(
            lines[1],
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a.txt"
        );
        assert!(lines[2].ends_with("  b.txt"));
        assert!(lines[3].ends_with("  config.txt"));
    }

    #[test]
    fn recreate_clears_stale_files() {
        let root = tempfile::tempdir().unwrap();
        let mut d = RunDir::create(root.path(), "x").unwrap();
        d.write("old.txt", "1").unwrap();
        RunDir::create(root.path(), "x").unwrap();
        assert!(!root.path().join("x/old.txt").exists());
    }

    #[test]
    fn missing_artifact_names_subcommand() {
        let root = tempfile::tempdir().unwrap();
        let err = require(root.path(), "data", "dataset.bin", "gen-data").unwrap_err();
        assert_eq!(err.category(), "missing-artifact");
        assert!(err.to_string().ends_with("run gen-data first"), "{err}");
    }
}
