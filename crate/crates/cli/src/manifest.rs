//! Run manifests: what was run, on which inputs, producing which files.

use std::fs;
use std::path::{Path, PathBuf};

use latnas::space::SpaceConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{failure, CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Output files are relative to the run directory; inputs are absolute.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    /// Directory relative paths in `args` resolve against.
    pub cwd: String,
    pub config_source: Option<String>,
    pub config: Option<SpaceConfig>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub exit_code: i32,
    pub wall_clock_ms: u64,
    pub version: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn input_artifact(path: &Path) -> CliResult<Artifact> {
    let abs = fs::canonicalize(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(Artifact { path: abs.display().to_string(), sha256: sha256_file(&abs)? })
}

/// Collects the files a command writes into its run directory.
pub struct RunDir {
    pub root: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::failure(format!("{}: {e}", root.display())))?;
        Ok(RunDir { root: root.to_path_buf(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(failure)?;
        }
        fs::write(&p, contents).map_err(|e| CliError::failure(format!("{}: {e}", p.display())))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn artifacts(&self) -> CliResult<Vec<Artifact>> {
        self.outputs
            .iter()
            .map(|name| Ok(Artifact { path: name.clone(), sha256: sha256_file(&self.path(name))? }))
            .collect()
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(failure)? + "\n";
        fs::write(dir.join(MANIFEST_FILE), text).map_err(failure)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("bad manifest: {e}")))
    }
}
