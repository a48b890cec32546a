//! All-or-nothing output: files are staged in memory and written only once
//! every result is ready, through a sibling temp directory and renames.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn text(&mut self, name: &str, text: impl Into<String>) {
        self.files.push((name.to_string(), text.into().into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, text);
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, data: Vec<u8>) {
        self.files.push((name.to_string(), data));
    }

    /// Write every staged file into `dir`, creating it if needed.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let stage = tempfile::Builder::new()
            .prefix(".dyntile-out-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        for (name, data) in &self.files {
            let p = stage.path().join(name);
            fs::write(&p, data).with_context(|| format!("writing {}", p.display()))?;
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, _) in &self.files {
            let to = dir.join(name);
            fs::rename(stage.path().join(name), &to).with_context(|| format!("moving output to {}", to.display()))?;
            written.push(to);
        }
        Ok(written)
    }

    /// Write a single staged file to an exact path.
    pub fn commit_file(self, path: &Path) -> Result<()> {
        let [(_, data)] = <[_; 1]>::try_from(self.files).map_err(|_| anyhow::anyhow!("expected one staged file"))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, data).with_context(|| format!("writing {}", path.display()))
    }
}
