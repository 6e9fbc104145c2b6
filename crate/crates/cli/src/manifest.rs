use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spikedecode::{Error, Result};

use crate::config::RunConfig;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub synth: u64,
    pub pipeline: u64,
    pub train: u64,
}

/// Written by every command next to its artifacts.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub argv: Vec<String>,
    pub seeds: Seeds,
    pub inputs: Vec<PathBuf>,
    /// File names inside the output directory.
    pub outputs: Vec<String>,
    pub config: &'a RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<&'static str>,
}

impl<'a> RunManifest<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig, inputs: Vec<PathBuf>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().skip(1).collect(),
            seeds: Seeds {
                synth: config.synth.seed,
                pipeline: config.pipeline.seed,
                train: config.train.seed,
            },
            inputs,
            outputs: Vec::new(),
            config,
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, text: &'static str) -> Self {
        self.notes.push(text);
        self
    }

    /// Records what `dir` holds, then writes the manifest and the resolved
    /// config into it.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.config.write_resolved(dir)?;
        let mut outputs = Vec::new();
        list_files(dir, dir, &mut outputs)?;
        outputs.retain(|f| f != RUN_MANIFEST_FILE);
        outputs.push(RUN_MANIFEST_FILE.to_string());
        outputs.sort();
        self.outputs = outputs;
        let path = dir.join(RUN_MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self).map_err(|e| Error::malformed(RUN_MANIFEST_FILE, e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
