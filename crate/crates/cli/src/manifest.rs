use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Written next to every command's outputs. Only `wall_clock_seconds`
/// varies between identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Digest of the effective configuration (file contents and flags).
    pub config_digest: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

/// Collects inputs and outputs of one command run.
pub struct Run {
    command: &'static str,
    out_dir: PathBuf,
    started: Instant,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    pub fn start(command: &'static str, out_dir: &Path) -> CliResult<Run> {
        std::fs::create_dir_all(out_dir).map_err(|source| CliError::Output {
            path: out_dir.to_path_buf(),
            source,
        })?;
        Ok(Run {
            command,
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, config: serde_json::Value) {
        self.config = config;
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        String::from_utf8(bytes).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Output { path, source })?;
        self.outputs
            .insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn finish(self) -> CliResult<()> {
        let config_text = serde_json::to_string(&self.config).expect("json value serializes");
        let manifest = RunManifest {
            command: self.command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_digest: sha256_hex(config_text.as_bytes()),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|source| CliError::Output { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
