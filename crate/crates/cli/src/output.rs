use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jobs::Job;
use crate::Failure;

/// Writes `contents` next to `path` under a temporary name, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| Failure::Runtime(format!("cannot create temporary file in {}: {e}", dir.display())))?;
    tmp.write_all(contents)
        .and_then(|_| tmp.flush())
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| Failure::Runtime(format!("cannot move output into {}: {}", path.display(), e.error)))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub job: Job,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub started: String,
    pub finished: String,
    pub artifact_version: String,
    pub outputs: Vec<String>,
    pub jobs: Option<usize>,
    pub timing: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// `<out>.manifest.json` when there is an output file, else a per-command file
/// in the working directory.
pub fn manifest_path(explicit: Option<&Path>, out: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match out {
        Some(o) => {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("got-{command}.manifest.json")),
    }
}
