//! Output directories that are cleaned up when a command fails.

use std::fs;
use std::path::{Path, PathBuf};

use dualmoe_core::{Error, Result};

/// Tracks what a command writes under `root`. Unless [`Output::commit`] is
/// called, dropping removes the directory if this command created it, or
/// otherwise every tracked path.
pub struct Output {
    root: PathBuf,
    created_root: bool,
    tracked: Vec<PathBuf>,
    committed: bool,
}

impl Output {
    pub fn create(root: &Path) -> Result<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            tracked: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `name` under the root and returns its full path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.tracked.push(p.clone());
        p
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Output {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        if self.created_root {
            let _ = fs::remove_dir_all(&self.root);
            return;
        }
        for p in &self.tracked {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_new_directory_is_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("out");
        {
            let mut o = Output::create(&root).unwrap();
            fs::write(o.path("a.csv"), "x").unwrap();
        }
        assert!(!root.exists());
    }

    #[test]
    fn uncommitted_files_in_existing_directory_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("keep.txt"), "k").unwrap();
        {
            let mut o = Output::create(tmp.path()).unwrap();
            fs::write(o.path("a.csv"), "x").unwrap();
        }
        assert!(tmp.path().join("keep.txt").exists());
        assert!(!tmp.path().join("a.csv").exists());
    }

    #[test]
    fn committed_output_stays() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("out");
        let mut o = Output::create(&root).unwrap();
        fs::write(o.path("a.csv"), "x").unwrap();
        o.commit();
        assert!(root.join("a.csv").exists());
    }
}
