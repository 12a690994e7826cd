use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command: its arguments, resolved config,
/// seed, code version and digests of what it read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Command,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Input path to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

pub fn digest_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(args: &Command, config: serde_json::Value, seed: u64) -> RunManifest {
        RunManifest {
            command: args.name().to_string(),
            args: args.clone(),
            config,
            seed,
            version: concat!("hkgdiff-cli ", env!("CARGO_PKG_VERSION")).to_string(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Record an input file; missing optional files are skipped.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        if path.is_file() {
            self.inputs.insert(path.display().to_string(), digest_file(path)?);
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Inputs whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> CliResult<Vec<String>> {
        let mut changed = Vec::new();
        for (path, want) in &self.inputs {
            let p = Path::new(path);
            if !p.is_file() || &digest_file(p)? != want {
                changed.push(path.clone());
            }
        }
        Ok(changed)
    }
}
