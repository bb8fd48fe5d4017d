use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// Tracks everything a command writes so a failed run leaves nothing behind.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an output file; its parent directory must already exist.
    pub fn file(&mut self, path: &Path) -> Result<PathBuf> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if !parent.is_dir() {
                return Err(CliError::Io(format!("output directory {} does not exist", parent.display())));
            }
        }
        if path.is_dir() {
            return Err(CliError::Io(format!("output {} is a directory", path.display())));
        }
        self.files.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    /// Creates `path` if needed. Directories created here are removed on failure.
    pub fn dir(&mut self, path: &Path) -> Result<()> {
        if path.exists() {
            if !path.is_dir() {
                return Err(CliError::Io(format!("output {} exists and is not a directory", path.display())));
            }
            return Ok(());
        }
        std::fs::create_dir_all(path)?;
        self.dirs.push(path.to_path_buf());
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.files.iter().rev() {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}
