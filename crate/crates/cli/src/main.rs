use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use faf_core::replay::{emit_report, parse_scripts, run_replay, validate_script, DebateScript, ReplayConfig, ReplayError, ReportFormat};
use faf_core::{AggregationPolicy, Grid};
use faf_service::{Config, Server};

/// Exit status for scripts that fail validation.
const INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "faf", version, about = "Forecasting argumentation frameworks: replay, validate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay scripted debates through the rationality gate and report accuracy.
    Replay {
        script: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Brier)]
        policy: Policy,
        /// Forecast grid step.
        #[arg(long, default_value_t = 0.01)]
        grid: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check debate scripts without replaying them.
    Validate { script: PathBuf },
    /// Run the HTTP/JSON service.
    Serve {
        /// TOML config file; FAF_* environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Store root directory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Mean,
    Brier,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

/// A failure that maps to a specific exit status.
struct Exit(u8, String);

fn read_scripts(path: &Path) -> Result<Vec<DebateScript>, Exit> {
    let text = std::fs::read_to_string(path).map_err(|e| Exit(1, format!("reading {}: {e}", path.display())))?;
    parse_scripts(&text).map_err(|e| Exit(INVALID, format!("{}: not a debate script: {e}", path.display())))
}

fn replay(script: &Path, policy: Policy, grid: f64, format: Format, out: Option<&Path>) -> Result<(), Exit> {
    let grid = Grid::from_step(grid).map_err(|e| Exit(INVALID, e.to_string()))?;
    let policy = match policy {
        Policy::Mean => AggregationPolicy::Mean,
        Policy::Brier => AggregationPolicy::default(),
    };
    let scripts = read_scripts(script)?;
    let report = run_replay(&scripts, &ReplayConfig { policy, grid }).map_err(|e| match e {
        ReplayError::Invalid { .. } => Exit(INVALID, e.to_string()),
        other => Exit(1, other.to_string()),
    })?;
    let text = emit_report(&report, format.into());
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Exit(1, format!("writing {}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Exit(1, e.to_string())),
    }
}

fn validate(script: &Path) -> Result<(), Exit> {
    let scripts = read_scripts(script)?;
    let mut failures = 0;
    for s in &scripts {
        let issues = validate_script(s);
        for issue in &issues {
            eprintln!("{}: {issue}", s.question.id);
        }
        failures += issues.len();
    }
    if failures > 0 {
        return Err(Exit(INVALID, format!("{failures} problem(s) found")));
    }
    println!("ok: {} script(s) valid", scripts.len());
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

fn serve(config: Option<&Path>, bind: Option<SocketAddr>, store: Option<PathBuf>) -> anyhow::Result<()> {
    let mut config = Config::load(config)?;
    if let Some(b) = bind {
        config.bind = b;
    }
    if let Some(s) = store {
        config.store_root = s;
    }
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let server = Server::bind(config.clone()).await?;
        let addr = server.local_addr()?;
        tracing::info!(%addr, store = %config.store_root.display(), "serving");
        // Announced on stdout so wrappers binding port 0 can find the server.
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        server.run(shutdown_signal()).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| default_level.into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Replay { script, policy, grid, format, out } => replay(&script, policy, grid, format, out.as_deref()),
        Command::Validate { script } => validate(&script),
        Command::Serve { config, bind, store } => serve(config.as_deref(), bind, store).map_err(|e| Exit(1, format!("{e:#}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, message)) => {
            eprintln!("faf: {message}");
            ExitCode::from(code)
        }
    }
}
