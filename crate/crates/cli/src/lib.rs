//! The `flowbot` command line: scenario loading, sub-commands and the
//! teleoperation server.

pub mod commands;
pub mod scenario;
pub mod serve;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::Output;
use crate::scenario::Scenario;

#[derive(Debug, Parser)]
#[command(name = "flowbot", version, about = "Recirculating-flow soft robot simulator")]
pub struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Seed for noise injection.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady-state solve of the scenario subject.
    Solve,
    /// Transient run of a network or assembly under the scenario schedule.
    Simulate,
    /// Pressure × direction × fluid sweep of a single actuator.
    Sweep,
    /// Gripper preset walkthrough or quadruped swim gait.
    Demo,
    /// Reachable finger sign patterns of a gripper.
    Enumerate,
    /// Curvature analysis of a marker track.
    Mocap {
        /// Marker CSV; overrides the scenario input.
        input: Option<PathBuf>,
    },
    /// Teleoperation server.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// JSON-lines log per session; the session id is added to the file name.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = flowbot_core::teleop::DEFAULT_TICK_RATE)]
        tick_rate: f64,
    },
}

fn load(path: Option<&Path>) -> Result<Scenario> {
    Scenario::load(path.context("this command needs --scenario <path>")?)
}

/// Runs a file-producing command without touching the disk.
pub fn execute(cli: &Cli) -> Result<Output> {
    let scenario = cli.scenario.as_deref();
    match &cli.command {
        Command::Solve => commands::solve(&load(scenario)?),
        Command::Simulate => commands::simulate(&load(scenario)?),
        Command::Sweep => commands::sweep(&load(scenario)?, cli.seed),
        Command::Demo => commands::demo(&load(scenario)?),
        Command::Enumerate => commands::enumerate(&load(scenario)?),
        Command::Mocap { input } => {
            let s = scenario.map(Scenario::load).transpose()?;
            commands::mocap(s.as_ref(), input.as_deref())
        }
        Command::Serve { .. } => anyhow::bail!("`serve` does not produce files"),
    }
}

pub fn write_output(out_dir: &Path, output: &Output) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    output
        .files
        .iter()
        .map(|(name, bytes)| {
            let path = out_dir.join(name);
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Serve {
        bind,
        port,
        record,
        tick_rate,
    } = &cli.command
    {
        let options = serve::ServeOptions {
            tick_rate: *tick_rate,
            record: record.clone(),
        };
        let rt = tokio::runtime::Runtime::new()?;
        return rt.block_on(serve::run(bind, *port, options));
    }
    let output = execute(&cli)?;
    let written = write_output(&cli.out, &output)?;
    let mut summary = output.summary;
    summary["files"] = serde_json::json!(written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
