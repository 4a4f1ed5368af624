//! Per-run manifest: resolved config, seed and hashes of every input and output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use curbflow::io::sha256_hex;
use curbflow::Result;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    surrogate_schema: String,
    argv: Vec<String>,
    subcommand: &'a str,
    seed: u64,
    seed_source: &'a str,
    threads: usize,
    config_hash: String,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

pub struct Recorder {
    pub cfg: RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    pub fn new(cfg: RunConfig) -> Self {
        Recorder { cfg, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes `name` inside the output directory and records its hash.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.cfg.out.join(name);
        std::fs::write(&path, contents)?;
        self.outputs.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, &text)
    }

    /// Records a file some library call wrote into the output directory.
    pub fn wrote(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.cfg.out.join(name))?;
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let config_json = serde_json::to_string(&self.cfg)?;
        let m = Manifest {
            tool: "curbflow",
            version: env!("CARGO_PKG_VERSION"),
            surrogate_schema: curbflow::surrogates::schema_hash(),
            argv: std::env::args().collect(),
            subcommand: &self.cfg.subcommand,
            seed: self.cfg.seed,
            seed_source: self.cfg.seed_source,
            threads: rayon::current_num_threads(),
            config_hash: sha256_hex(config_json.as_bytes()),
            config: &self.cfg,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        std::fs::write(self.cfg.out.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}
