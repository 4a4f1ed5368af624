//! `curbflow` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure. Errors go to stderr as `E:<code>: <message>`.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "curbflow", version, about = "Curbside stop simulation, surrogate experiments and rolling-horizon control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config with optional `seed`, `threads`, `ga`, `surrogate`, `mpc`, `experiment` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed. CURBFLOW_SEED overrides it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all logical cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Direct,
    Surrogate,
    Identity,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a scenario: density.csv, flows.csv and summary.json.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated stop positions of the approaching vehicles; defaults to the no-control draw.
        #[arg(long)]
        positions: Option<String>,
        #[arg(long, default_value_t = curbflow::presets::RIDE_HAIL_BASELINE_SEED)]
        baseline_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Draw a training set: local from a scenario, global from a class template.
    Sample {
        #[arg(long, conflicts_with = "class", required_unless_present = "class")]
        scenario: Option<PathBuf>,
        /// Scenario class C1..C5 for a global sample.
        #[arg(long)]
        class: Option<String>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a surrogate to a sample file and write model.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "GPR")]
        family: String,
        #[command(flatten)]
        common: Common,
    },
    /// Optimize stop positions, directly or through a surrogate.
    Optimize {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "direct")]
        solver: SolverKind,
        #[arg(long, default_value = "GPR")]
        family: String,
        /// Local sample size when no model is given.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Pre-trained model; global models also need `--class`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        class: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Rolling-horizon rollout against the no-control baseline.
    MpcRun {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "direct")]
        solver: SolverKind,
        #[arg(long, default_value = "GPR")]
        family: String,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Repeat the rollout over the five detour-weight regimes.
        #[arg(long)]
        sweep: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Ranking and mean errors of locally trained surrogates over the class suite.
    EvaluateLocal {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Ranking errors of globally trained surrogates over the class suite.
    EvaluateGlobal {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the Lax-Hopf density field with the cell-transmission oracle.
    OracleDiff {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        positions: Option<String>,
        #[arg(long, default_value_t = curbflow::presets::RIDE_HAIL_BASELINE_SEED)]
        baseline_seed: u64,
        /// Oracle cell length in metres.
        #[arg(long, default_value_t = curbflow::ctm::ORACLE_CELL)]
        cell: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Write the bundled scenarios and class templates as JSON.
    ExportScenarios {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SuiteArgs {
    /// Comma-separated classes, e.g. C1,C4.
    #[arg(long)]
    pub classes: Option<String>,
    /// Comma-separated families, e.g. LR,GPR.
    #[arg(long)]
    pub families: Option<String>,
    /// Comma-separated training sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Sub-scenarios per class; 0 uses all.
    #[arg(long)]
    pub max_sub_scenarios: Option<usize>,
    /// Skip the direct solves behind the mean error.
    #[arg(long)]
    pub no_mean_error: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("E:2: {}", e.to_string().trim_end().replace('\n', "\nE:2: "));
                    ExitCode::from(2)
                }
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_config() { 2 } else { 3 };
            eprintln!("E:{code}: {e}");
            ExitCode::from(code)
        }
    }
}
