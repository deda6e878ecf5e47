use std::io::Write;
use std::path::{Path, PathBuf};

use cim_core::{CimError, Result};

/// A rendered command result, written only after the whole command succeeded.
pub struct Artifact {
    pub default_name: String,
    pub contents: String,
    /// Explicit destination; falls back to `--out` / `output_dir` / stdout.
    pub path: Option<PathBuf>,
}

/// Writes through a temporary file in the target directory, so a failure
/// never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CimError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let io = |e: std::io::Error| CimError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn emit(artifacts: Vec<Artifact>, out: Option<&Path>, output_dir: Option<&Path>) -> Result<()> {
    for a in artifacts {
        let target = a
            .path
            .or_else(|| out.map(Path::to_path_buf))
            .or_else(|| output_dir.map(|d| d.join(&a.default_name)));
        match target {
            Some(p) => write_atomic(&p, &a.contents)?,
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(a.contents.as_bytes())
                    .and_then(|_| stdout.flush())
                    .map_err(|e| CimError::Io {
                        path: "<stdout>".into(),
                        source: e,
                    })?;
            }
        }
    }
    Ok(())
}

/// Pretty JSON with keys sorted (serde_json maps are ordered).
pub fn json(value: &serde_json::Value) -> Result<String> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CimError::Invariant(e.to_string()))?;
    Ok(s + "\n")
}
