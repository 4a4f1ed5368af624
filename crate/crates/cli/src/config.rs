use std::path::{Path, PathBuf};

use curbflow::evaluation::ExperimentSpec;
use curbflow::mpc::MpcConfig;
use curbflow::optimizer::GaConfig;
use curbflow::surrogates::SurrogateConfig;
use curbflow::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_VAR: &str = "CURBFLOW_SEED";

/// Optional JSON config. Every section is optional; unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub ga: Option<GaConfig>,
    pub surrogate: Option<SurrogateConfig>,
    pub mpc: Option<MpcConfig>,
    pub experiment: Option<ExperimentSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Settings shared by all subcommands after merging flags, file and environment.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub seed_source: &'static str,
    pub threads: usize,
    pub out: PathBuf,
    pub file: FileConfig,
}

impl RunConfig {
    pub fn resolve(
        subcommand: &str,
        config: Option<&Path>,
        seed_flag: Option<u64>,
        threads_flag: Option<usize>,
        out: &Path,
    ) -> Result<Self> {
        let file = match config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let env_seed = match std::env::var(SEED_VAR) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| Error::Config(format!("{SEED_VAR}={v} is not a seed")))?),
            Err(_) => None,
        };
        let (seed, seed_source) = match (env_seed, seed_flag, file.seed) {
            (Some(s), _, _) => (s, "env"),
            (None, Some(s), _) => (s, "flag"),
            (None, None, Some(s)) => (s, "config"),
            _ => (0, "default"),
        };
        let threads = threads_flag.or(file.threads).unwrap_or(0);
        std::fs::create_dir_all(out)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", out.display())))?;
        let probe = out.join(".curbflow-write-test");
        std::fs::write(&probe, b"")
            .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", out.display())))?;
        let _ = std::fs::remove_file(probe);
        Ok(RunConfig { subcommand: subcommand.to_string(), seed, seed_source, threads, out: out.to_path_buf(), file })
    }

    pub fn ga(&self) -> GaConfig {
        // the run seed always drives the GA
        GaConfig { seed: self.seed, ..self.file.ga.clone().unwrap_or_default() }
    }

    pub fn surrogate(&self) -> SurrogateConfig {
        self.file.surrogate.clone().unwrap_or_default()
    }
}

pub fn parse_positions(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad position {p:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<FileConfig>(r#"{"seed": 1, "sede": 2}"#).unwrap_err();
        assert!(err.to_string().contains("sede"));
        let err = serde_json::from_str::<FileConfig>(r#"{"ga": {"populaton": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("populaton"));
    }

    #[test]
    fn sections_are_optional() {
        let c: FileConfig = serde_json::from_str(r#"{"ga": {"population": 12}}"#).unwrap();
        assert_eq!(c.ga.unwrap().population, 12);
        assert!(c.mpc.is_none());
    }

    #[test]
    fn positions_list() {
        assert_eq!(parse_positions("42, 56,70").unwrap(), vec![42.0, 56.0, 70.0]);
        assert!(parse_positions("42,x").is_err());
        assert!(parse_positions("").unwrap().is_empty());
    }
}
