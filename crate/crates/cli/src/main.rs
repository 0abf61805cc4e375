use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use ctm_core::harness::tasks::{to_jsonl, TaskError};
use ctm_core::harness::world::{SimEnv, WorldState};
use ctm_core::harness::{gen_tasks, load_tasks, read_logs, run_to_dir, EpisodeOptions, Policy, RunError};
use ctm_core::harness::{compute_metrics, MetricsError};
use ctm_core::model::ConfigError;
use ctm_core::router::{serve, serve_tcp, ToolServer};
use ctm_core::{Config, Model};

#[derive(Parser)]
#[command(name = "ctm", version, about = "Tick-slab reasoning runtime and task harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Ctm,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Stdio,
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task in a task file and write logs plus metrics.
    Run {
        #[arg(long)]
        tasks: PathBuf,
        /// JSON config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ctm")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic tasks as JSONL.
    GenTasks {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics from written episode logs.
    Metrics {
        /// A run directory or its `logs` subdirectory.
        #[arg(long)]
        logs: PathBuf,
    },
    /// Serve the simulated tools over newline-delimited JSON-RPC.
    Serve {
        #[arg(long, value_enum, default_value = "stdio")]
        transport: TransportArg,
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed the world from the first task of this file.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Errors that map to exit code 2.
fn is_setup_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || c.is::<TaskError>()
            || c.is::<io::Error>()
            || matches!(c.downcast_ref::<RunError>(), Some(RunError::Config(_) | RunError::Io { .. }))
            || c.is::<MetricsError>()
    })
}

fn load_config(path: Option<&Path>) -> Result<Config, ConfigError> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { tasks, config, policy, seed, out } => {
            let config = load_config(config.as_deref())?;
            let model = Model::build(&config, seed)?;
            let tasks = load_tasks(&tasks).with_context(|| format!("loading {}", tasks.display()))?;
            let policy = match policy {
                PolicyArg::Ctm => Policy::Ctm,
                PolicyArg::Oracle => Policy::ScriptedOracle,
            };
            let (_, report) = run_to_dir(&tasks, &model, &EpisodeOptions::new(policy, seed), &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GenTasks { seed, count, out } => {
            anyhow::ensure!(count >= 1, "count must be at least 1");
            fs::write(&out, to_jsonl(&gen_tasks(seed, count))).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Metrics { logs } => {
            let dir = if logs.join("logs").is_dir() { logs.join("logs") } else { logs };
            let report = compute_metrics(&read_logs(&dir)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Serve { transport, addr, config, tasks, seed } => {
            let config = load_config(config.as_deref())?;
            let model = Model::build(&config, seed)?;
            let joints = model.actuator.joints();
            let world = match tasks {
                Some(path) => {
                    let tasks = load_tasks(&path).with_context(|| format!("loading {}", path.display()))?;
                    let first = tasks.first().context("task file is empty")?;
                    WorldState::from_task(first, joints)
                }
                None => WorldState {
                    objects: Default::default(),
                    robot_at: ctm_core::harness::world::START_LOCATION.into(),
                    goal: ctm_core::harness::tasks::Predicate::Ok,
                    joints: vec![0.0; joints],
                },
            };
            let env = SimEnv { world, sync: vec![0.0; config.ctm.sync_pairs], actuator: model.actuator.clone() };
            let mut server = ToolServer::new(model.registry.clone(), env);
            match transport {
                TransportArg::Stdio => serve(&mut server, BufReader::new(io::stdin().lock()), io::stdout().lock())?,
                TransportArg::Tcp => {
                    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
                    log::info!("listening on {}", listener.local_addr()?);
                    serve_tcp(&mut server, listener)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_setup_error(&e) { 2 } else { 1 })
        }
    }
}
