//! Command-line harness for the multiscale diffusion prediction network.
//!
//! Commands: gen-data, train, predict, evaluate, ablate. Flags mirror the
//! run-configuration keys (`--key value`); `--config <path>` loads a
//! `key = value` file. Exit code 0 on success; failures print one
//! machine-readable line `error: <category>: <message>`.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use config::RunConfig;

/// Error with a stable category for the single-line failure output.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.category, self.message)
    }
}

impl From<mdpnet_core::error::DataError> for CliError {
    fn from(e: mdpnet_core::error::DataError) -> Self {
        CliError::new("data", e.to_string())
    }
}

impl From<mdpnet_core::error::SimError> for CliError {
    fn from(e: mdpnet_core::error::SimError) -> Self {
        CliError::new("sim", e.to_string())
    }
}

impl From<mdpnet_core::error::TrainError> for CliError {
    fn from(e: mdpnet_core::error::TrainError) -> Self {
        CliError::new("train", e.to_string())
    }
}

impl From<mdpnet_core::error::TensorError> for CliError {
    fn from(e: mdpnet_core::error::TensorError) -> Self {
        CliError::new("shape", e.to_string())
    }
}

impl From<mdpnet_core::error::MetricError> for CliError {
    fn from(e: mdpnet_core::error::MetricError) -> Self {
        CliError::new("data", e.to_string())
    }
}

fn usage() -> String {
    format!(
        "mdpnet <command> [--config <path>] [--key value ...]\n\n\
         commands:\n\
         \x20 gen-data   simulate trajectories, normalize, write a dataset\n\
         \x20 train      two-stage training on a dataset (8:2 split)\n\
         \x20 predict    autoregressive rollout from held-out initial states\n\
         \x20 evaluate   NMSE/SSIM of predictions against ground truth\n\
         \x20 ablate     scale / allocation / noise / perturbation studies\n\n\
         keys (flags mirror these, underscores or hyphens):\n{}",
        config::help_table()
    )
}

fn parse_args(args: &[String]) -> Result<(String, RunConfig), CliError> {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        println!("{}", usage());
        std::process::exit(0);
    }
    let command = args[0].clone();
    let mut cfg = RunConfig::defaults();
    // first pass: --config files, in order
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            let path = args
                .get(i + 1)
                .ok_or_else(|| CliError::new("config", "--config needs a path"))?;
            cfg.load_file(std::path::Path::new(path))?;
            i += 2;
        } else {
            i += 1;
        }
    }
    // second pass: --key value flags override
    let mut i = 1;
    while i < args.len() {
        let arg = &args[i];
        if arg == "--config" {
            i += 2;
            continue;
        }
        if arg == "--help" || arg == "-h" {
            println!("{}", usage());
            std::process::exit(0);
        }
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::new("config", format!("expected --key, got '{arg}'")))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| CliError::new("config", format!("flag --{key} needs a value")))?;
        cfg.set(key, value)?;
        i += 2;
    }
    Ok((command, cfg))
}

fn run() -> Result<(), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (command, cfg) = parse_args(&args)?;
    match command.as_str() {
        "gen-data" => commands::cmd_gen_data(&cfg),
        "train" => commands::cmd_train(&cfg),
        "predict" => commands::cmd_predict(&cfg),
        "evaluate" => commands::cmd_evaluate(&cfg),
        "ablate" => commands::cmd_ablate(&cfg),
        other => Err(CliError::new(
            "config",
            format!("unknown command '{other}' (try --help)"),
        )),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
