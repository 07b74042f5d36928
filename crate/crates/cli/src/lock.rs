use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const LOCK_FILE: &str = ".tse.lock";

/// Exclusive claim on a run directory, released on drop.
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(workdir).map_err(|e| CliError::runtime(format!("creating {}: {e}", workdir.display())))?;
        let path = workdir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                let owner = fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::runtime(format!(
                    "{} is locked by process {} (delete {} if that process is gone)",
                    workdir.display(),
                    owner.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::runtime(format!("creating {}: {e}", path.display()))),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
