//! Command-line front end: instance generation, characteristic functions,
//! bot matchups, evaluation and training. Every run writes its effective
//! configuration to `<out>/config.json`; `rerun` replays it.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Command, RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(name = "coalition-lab", version, about = "Collaborative vehicle routing as a coalitional bargaining game")]
struct Cli {
    /// Output directory. Defaults to `$COALITION_LAB_OUT/<command>`, or
    /// `runs/<command>` when the variable is unset.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    #[command(flatten)]
    Run(Command),
    /// Re-execute a run from its echoed config.json.
    Rerun { config: PathBuf },
}

fn default_out(command: &Command) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(command.name())
}

fn resolve(cli: Cli) -> Result<RunConfig> {
    match cli.action {
        Action::Run(command) => Ok(RunConfig {
            version: env!("CARGO_PKG_VERSION").to_string(),
            out: cli.out.unwrap_or_else(|| default_out(&command)),
            workers: cli.workers.unwrap_or(0),
            command,
        }),
        Action::Rerun { config } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("cannot read {}", config.display()))?;
            let mut run: RunConfig =
                serde_json::from_str(&text).with_context(|| format!("{} is not a run config", config.display()))?;
            if let Some(out) = cli.out {
                run.out = out;
            }
            if let Some(w) = cli.workers {
                run.workers = w;
            }
            Ok(run)
        }
    }
}

fn execute(run: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
    let echo = serde_json::to_string_pretty(run)? + "\n";
    std::fs::write(run.out.join("config.json"), echo)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(run.workers).build()?;
    pool.install(|| commands::run(&run.command, &run.out))
}

fn error_record(err: &anyhow::Error, command: Option<&str>) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<coalition_lab::Error>())
        .map(|e| format!("{e:?}").split('(').next().unwrap_or("Error").to_lowercase())
        .unwrap_or_else(|| "error".into());
    json!({
        "error": {
            "kind": kind,
            "command": command,
            "message": err.to_string(),
            "causes": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
        }
    })
}

fn fail(err: anyhow::Error, command: Option<&str>, out: Option<&Path>) -> ExitCode {
    let record = error_record(&err, command);
    if let Some(dir) = out.filter(|d| d.is_dir()) {
        let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
    }
    eprintln!("{record}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match resolve(cli) {
        Ok(run) => run,
        Err(e) => return fail(e, None, None),
    };
    match execute(&run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e, Some(run.command.name()), Some(&run.out)),
    }
}
