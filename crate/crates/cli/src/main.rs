mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refcheck_core::model::ContextWindow;
use refcheck_core::time::Timestamp;

use crate::config::{CliConfig, Format, DEFAULT_LEDGER};
use crate::error::{CliError, EXIT_CODE_HELP};

#[derive(Parser)]
#[command(
    name = "refcheck",
    version,
    about = "Check whether hosted model identifiers resolve to a stable configuration",
    after_help = EXIT_CODE_HELP
)]
struct Cli {
    /// Config file (default: ./refcheck.toml when present)
    #[arg(long, global = true, env = "REFCHECK_CONFIG")]
    config: Option<PathBuf>,
    /// Ledger file (default: from config, else ./refcheck.ledger)
    #[arg(long, global = true)]
    ledger: Option<PathBuf>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a probe campaign and append its observations to the ledger
    Probe(commands::probe::ProbeArgs),
    /// Fingerprint diversity and overlap over a ledger selection
    Report(commands::report::ReportArgs),
    /// Register and check claims
    Claim {
        #[command(subcommand)]
        action: commands::claim::ClaimAction,
    },
    /// Attestation keys, signing and verification
    Attest {
        #[command(subcommand)]
        action: commands::attest::AttestAction,
    },
    /// Probe splits and drift assessment
    Drift {
        #[command(subcommand)]
        action: commands::drift::DriftAction,
    },
    /// Re-run the drift threshold calibration on the simulator
    Calibrate(commands::drift::CalibrateArgs),
    /// Local simulated provider
    Sim {
        #[command(subcommand)]
        action: commands::sim::SimAction,
    },
    /// Generated data sets
    Fixture {
        #[command(subcommand)]
        action: commands::ledger::FixtureAction,
    },
    /// Ledger maintenance
    Ledger {
        #[command(subcommand)]
        action: commands::ledger::LedgerAction,
    },
}

/// `--window-from` / `--window-to` plus optional tag filters. Missing bounds
/// are open.
#[derive(Args, Debug, Clone, Default)]
pub struct WindowArgs {
    /// Window start, RFC 3339
    #[arg(long)]
    pub window_from: Option<Timestamp>,
    /// Window end (inclusive), RFC 3339
    #[arg(long)]
    pub window_to: Option<Timestamp>,
    /// Only observations with this account tag
    #[arg(long)]
    pub account: Option<String>,
    /// Only observations with this region tag
    #[arg(long)]
    pub region: Option<String>,
}

impl WindowArgs {
    pub fn window(&self) -> Result<ContextWindow, CliError> {
        let mut w = ContextWindow::new(
            self.window_from.unwrap_or(Timestamp::MIN),
            self.window_to.unwrap_or(Timestamp::MAX),
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        w.account_tag = self.account.clone();
        w.region_tag = self.region.clone();
        Ok(w)
    }

    /// Like [`WindowArgs::window`] but both bounds must be given.
    pub fn closed_window(&self) -> Result<ContextWindow, CliError> {
        if self.window_from.is_none() || self.window_to.is_none() {
            return Err(CliError::Usage("--window-from and --window-to are both required here".into()));
        }
        self.window()
    }
}

pub struct Ctx {
    pub cfg: CliConfig,
    pub format: Format,
    ledger: Option<PathBuf>,
}

impl Ctx {
    pub fn ledger_path(&self) -> PathBuf {
        self.ledger
            .clone()
            .or_else(|| self.cfg.ledger.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_LEDGER))
    }

    /// True when a ledger was named on the command line or in the config.
    pub fn ledger_configured(&self) -> bool {
        self.ledger.is_some() || self.cfg.ledger.is_some()
    }

    /// Prints `text` or `json` depending on `--format`.
    pub fn emit(&self, text: &str, json: &serde_json::Value) {
        match self.format {
            Format::Text => print!("{text}"),
            Format::Json => println!("{}", serde_json::to_string_pretty(json).expect("json value")),
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        format: cli.format.or(cfg.format).unwrap_or_default(),
        ledger: cli.ledger,
        cfg,
    };
    match cli.command {
        Command::Probe(args) => commands::probe::run(&ctx, args),
        Command::Report(args) => commands::report::run(&ctx, args),
        Command::Claim { action } => commands::claim::run(&ctx, action),
        Command::Attest { action } => commands::attest::run(&ctx, action),
        Command::Drift { action } => commands::drift::run(&ctx, action),
        Command::Calibrate(args) => commands::drift::calibrate(&ctx, args),
        Command::Sim { action } => commands::sim::run(&ctx, action),
        Command::Fixture { action } => commands::ledger::fixture(&ctx, action),
        Command::Ledger { action } => commands::ledger::run(&ctx, action),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("REFCHECK_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("refcheck: {e}");
            e.exit_code()
        }
    }
}
