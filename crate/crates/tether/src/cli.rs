//! Command-line entry point.
//!
//! Output is line-oriented and stable so scripts can parse it. Exit codes:
//! 0 on success, 1 on runtime failure, 2 on usage or config errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use tether_core::activity::{ReplaySpeed, Trace};
use tether_core::config::{default_config_path, Config, ConfigError};
use tether_core::focus::{TriggerContext, TriggerEvent, TriggerKind};
use tether_core::service::{Capabilities, Options, Tether};

use crate::daemon::{self, lock_data_dir, DirLock, RunOptions};

/// Scratch directory under `data_dir` used by `replay`.
pub const REPLAY_DIR: &str = "replay";

#[derive(Debug, Parser)]
#[command(name = "tether", version, about = "Local focus-support assistant for developers")]
pub struct Cli {
    /// Config file [default: ~/.tether/config]
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `data_dir` from the config file
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the daemon until SIGINT or SIGTERM
    Run {
        /// Do not sample the desktop; the API and clock still run
        #[arg(long)]
        headless: bool,
    },
    /// Replay a recorded activity trace into a scratch store
    Replay {
        path: PathBuf,
        /// Feed events without waiting between them
        #[arg(long, conflicts_with = "speed")]
        instant: bool,
        /// Virtual seconds per real second
        #[arg(long, value_name = "FACTOR")]
        speed: Option<f64>,
    },
    /// Index reference documents
    Index {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Search indexed documents
    Query {
        text: String,
        #[arg(short, value_name = "N")]
        k: Option<usize>,
        #[arg(long, value_name = "SCORE")]
        min_score: Option<f64>,
    },
    /// Print the prompt a trigger would produce
    PromptPreview {
        #[arg(long, value_enum)]
        trigger: TriggerArg,
    },
    /// Show points, streak, badges and themes
    Stats {
        /// Print the award journal as JSON lines instead
        #[arg(long)]
        export: bool,
    },
    /// Export stored data as JSON lines
    Export {
        #[arg(long, required = true)]
        chat: bool,
    },
    /// Print which features are enabled
    Capabilities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TriggerArg {
    Idle,
    Thrash,
    Recovery,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{}", chain(.0))]
    Runtime(#[from] anyhow::Error),
}

/// The error and its causes on one line, skipping causes whose text an
/// outer message already includes.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(matches!(cli.command, Command::Run { .. }));
    let mut out = std::io::stdout().lock();
    match execute(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("tether: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_logging(daemon: bool) {
    let default = if daemon { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("TETHER_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn load_config(cli: &Cli) -> Result<Config, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::load_or_default(&default_config_path())?,
    };
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    Ok(config)
}

/// Runs one command, writing its report to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Run { headless } => {
            daemon::run(config, RunOptions { headless }).map_err(anyhow::Error::from)?;
        }
        Command::Replay { path, instant, speed } => {
            let speed = match (instant, speed) {
                (true, _) => ReplaySpeed::Instant,
                (false, Some(f)) => ReplaySpeed::Multiplier(f),
                (false, None) => ReplaySpeed::Multiplier(1.0),
            };
            replay(config, &path, speed, out)?;
        }
        Command::Index { paths } => {
            let (_lock, tether) = open(config)?;
            for path in paths {
                let (doc_id, chunks) = tether
                    .index_file(&path)
                    .with_context(|| format!("index {}", path.display()))?;
                writeln!(out, "{doc_id}\t{chunks}").context("write output")?;
            }
        }
        Command::Query { text, k, min_score } => {
            let params = config.rag;
            let (_lock, tether) = open(config)?;
            let hits = tether
                .rag()
                .query(&text, k.unwrap_or(params.k), min_score.unwrap_or(params.min_score))
                .context("query")?;
            for h in hits {
                writeln!(out, "{:.6}\t{}\t{}", h.score, h.chunk.doc_id, h.chunk.chunk_index).context("write output")?;
            }
        }
        Command::PromptPreview { trigger } => {
            let thresholds = config.thresholds;
            let (_lock, tether) = open(config)?;
            let t = tether.now();
            let event = match trigger {
                TriggerArg::Idle => sample_trigger(
                    t,
                    TriggerKind::ProlongedIdle,
                    TriggerContext {
                        idle_seconds: Some(thresholds.prolonged_idle_threshold),
                        ..TriggerContext::default()
                    },
                ),
                TriggerArg::Thrash => sample_trigger(
                    t,
                    TriggerKind::ContextThrash,
                    TriggerContext {
                        switch_count: Some(thresholds.thrash_n as u32),
                        ..TriggerContext::default()
                    },
                ),
                TriggerArg::Recovery => sample_trigger(
                    t,
                    TriggerKind::Recovery,
                    TriggerContext {
                        recovered_within: Some(thresholds.recovery_window_seconds / 2.0),
                        ..TriggerContext::default()
                    },
                ),
            };
            let prompt = tether.preview(&event).context("compose prompt")?;
            write!(out, "{prompt}").context("write output")?;
            if !prompt.ends_with('\n') {
                writeln!(out).context("write output")?;
            }
        }
        Command::Stats { export } => {
            let (_lock, tether) = open(config)?;
            let state = tether.gamification();
            if export {
                for award in &state.journal {
                    writeln!(out, "{}", serde_json::to_string(award).context("encode award")?)
                        .context("write output")?;
                }
            } else {
                let join = |s: &std::collections::BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(",");
                writeln!(out, "points={}", state.points).context("write output")?;
                writeln!(out, "streak_days={}", state.streak_days).context("write output")?;
                writeln!(out, "badges={}", join(&state.badges)).context("write output")?;
                writeln!(out, "milestones={}", join(&state.milestones)).context("write output")?;
                writeln!(out, "themes={}", join(&state.unlocked_themes)).context("write output")?;
            }
        }
        Command::Export { chat: _ } => {
            let (_lock, tether) = open(config)?;
            for m in tether.store().state().messages {
                writeln!(out, "{}", serde_json::to_string(&m).context("encode message")?).context("write output")?;
            }
        }
        Command::Capabilities => {
            for (name, on) in Capabilities::from_config(&config).lines() {
                writeln!(out, "{name}={on}").context("write output")?;
            }
        }
    }
    Ok(())
}

fn sample_trigger(t: f64, kind: TriggerKind, context: TriggerContext) -> TriggerEvent {
    TriggerEvent {
        t,
        kind,
        context: TriggerContext {
            apps_involved: vec!["code".into()],
            ..context
        },
    }
}

/// Opens the pipeline on the configured store, refusing while a daemon
/// holds it.
fn open(config: Config) -> anyhow::Result<(DirLock, Tether)> {
    let lock = lock_data_dir(&config.data_dir)?;
    let tether = Tether::open(config, Options::live()).context("open store")?;
    Ok((lock, tether))
}

/// Replays `path` into a fresh store under `data_dir/replay`, leaving the
/// main store untouched.
fn replay(config: Config, path: &Path, speed: ReplaySpeed, out: &mut dyn Write) -> anyhow::Result<()> {
    let trace = Trace::load(path).with_context(|| format!("load trace {}", path.display()))?;
    let scratch = config.data_dir.join(REPLAY_DIR);
    let _lock = lock_data_dir(&config.data_dir)?;
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).with_context(|| format!("clear {}", scratch.display()))?;
    }
    std::fs::create_dir_all(&scratch).with_context(|| format!("create {}", scratch.display()))?;
    let config = Config {
        data_dir: scratch,
        ..config
    };
    let tether = Tether::open(config, Options::virtual_at(trace.header.created_at)).context("open replay store")?;
    let report = tether.replay_trace(&trace, speed).context("replay")?;

    let journal = tether.delivery_journal();
    for (trigger, record) in tether.triggers().iter().zip(&journal) {
        writeln!(
            out,
            "t={} trigger={} outcome={}",
            trigger.t,
            trigger.kind.as_str(),
            record.outcome.as_str()
        )?;
    }
    writeln!(
        out,
        "events_emitted={} virtual_duration={}",
        report.events_emitted, report.virtual_duration
    )?;
    let c = tether.counters();
    writeln!(out, "triggers={} nudges_delivered={}", c.triggers, c.nudges_delivered)?;
    Ok(())
}
