//! Argument handling shared by the binary and in-process callers.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{ExperimentConfig, RawConfig, Task};
use crate::error::{CliError, CliResult};
use crate::tasks;

#[derive(Parser, Debug)]
#[command(
    name = "sdelab",
    version,
    about = "Score-based generative modeling through SDEs on small, checkable problems"
)]
#[command(after_help = task_help())]
pub struct Args {
    /// Task to run; overrides `task` in the config.
    pub task: Option<String>,
    /// Config file of `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set sampler.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    pub print_config: bool,
}

impl Args {
    /// Parse a full argument vector, program name first.
    pub fn parse_from_argv<I, T>(argv: I) -> CliResult<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        Args::try_parse_from(argv).map_err(|e| CliError::new("syntax", "arguments", e.to_string()))
    }
}

fn task_help() -> String {
    let mut s = String::from("Tasks (config blocks read):\n");
    for t in Task::ALL {
        s.push_str(&format!("  {:<16} {} [{}]\n", t.name(), t.summary(), t.blocks()));
    }
    s.push_str("\nEnvironment:\n  SDELAB_THREADS   maximum worker threads (results do not depend on it)\n");
    s
}

/// Config file, then `--set`, then `--seed`/`--out`, then the positional task.
pub fn resolve(args: &Args) -> CliResult<ExperimentConfig> {
    let mut raw = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::new("io", "config", format!("{}: {e}", path.display())))?;
            RawConfig::parse_text(&text)?
        }
        None => RawConfig::default(),
    };
    for pair in &args.set {
        raw.set_pair(pair)?;
    }
    if let Some(seed) = args.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(out) = &args.out {
        raw.set("out", out.display().to_string());
    }
    if let Some(task) = &args.task {
        raw.set("task", task.clone());
    }
    ExperimentConfig::from_raw(&raw)
}

/// Size the global worker pool from `SDELAB_THREADS`, if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SDELAB_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::new(
            "invalid_value",
            "SDELAB_THREADS",
            format!("expected a positive integer, got `{value}`"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime("threads", e.to_string()))
}

/// Run the command and return what it prints on success: the resolved
/// config for `--print-config`, otherwise one written path per line.
pub fn execute(args: &Args) -> CliResult<String> {
    let cfg = resolve(args)?;
    if args.print_config {
        return Ok(cfg.to_text());
    }
    Ok(tasks::run(&cfg)?.iter().map(|p| format!("{}\n", p.display())).collect())
}
