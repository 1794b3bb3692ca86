//! Mirror of the attribute tree as plain files, for poking at a run with
//! `cat`. Write-only triggers appear as empty files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use kernml_core::kernel::KernelSide;
use kernml_core::wire::attrs::Access;

#[derive(Debug, Clone)]
pub struct AttrMirror {
    root: PathBuf,
}

impl AttrMirror {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(AttrMirror { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sync(&self, kernel: &KernelSide) -> io::Result<()> {
        for (path, access) in kernel.attributes().paths() {
            let file = self.root.join(path);
            if let Some(dir) = file.parent() {
                fs::create_dir_all(dir)?;
            }
            match access {
                Access::ReadOnly => {
                    let value = kernel.read_attr(path).map_err(|e| io::Error::other(e.to_string()))?;
                    fs::write(&file, value)?;
                }
                Access::WriteOnly => {
                    if !file.exists() {
                        fs::write(&file, "")?;
                    }
                }
            }
        }
        Ok(())
    }
}
