//! Reproducibility manifests written next to every command's outputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Fully resolved settings, defaults included.
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            seed,
            config: serde_json::to_value(config).context("serializing run config")?,
        })
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        infill_core::ingest::dataset::write_json(out.join(RUN_FILE), self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(RUN_FILE) } else { path.to_path_buf() };
        Ok(infill_core::ingest::dataset::read_json(&path)?)
    }

    /// Recorded argv with `--out` redirected when `out` is given.
    pub fn replay_argv(&self, out: Option<&Path>) -> Result<Vec<String>> {
        if self.command == "replay" {
            bail!("a replay manifest cannot be replayed");
        }
        let mut argv = self.argv.clone();
        let Some(out) = out else {
            return Ok(argv);
        };
        let out = out.to_string_lossy().into_owned();
        let mut replaced = false;
        let mut i = 0;
        while i < argv.len() {
            if argv[i] == "--out" && i + 1 < argv.len() {
                argv[i + 1] = out.clone();
                replaced = true;
                i += 1;
            } else if argv[i].starts_with("--out=") {
                argv[i] = format!("--out={out}");
                replaced = true;
            }
            i += 1;
        }
        if !replaced {
            bail!("recorded command has no --out flag");
        }
        Ok(argv)
    }
}
