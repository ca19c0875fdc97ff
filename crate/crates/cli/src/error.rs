use std::process::ExitCode;

use refcheck_core::claims::ClaimError;
use refcheck_core::ledger::LedgerError;

/// Exit codes. Each failure class has its own.
pub mod code {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    /// The command ran and the answer is negative: unbound, rejected, drift.
    pub const NEGATIVE: u8 = 3;
    pub const PARSE: u8 = 4;
    pub const CONFIG: u8 = 5;
    pub const INTEGRITY: u8 = 6;
    pub const NO_DATA: u8 = 7;
}

pub const EXIT_CODE_HELP: &str = "\
Exit codes:
  0  success; bound, verified, consistent
  1  i/o or network setup failure
  2  usage error
  3  negative verdict (unbound, rejected, drift, distinct)
  4  input file could not be parsed
  5  configuration error (unknown profile, missing token variable)
  6  ledger integrity failure
  7  empty selection or insufficient data";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("ledger integrity: {0}")]
    Integrity(String),
    #[error("{0}")]
    NoData(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Io(_) => code::IO,
            CliError::Usage(_) => code::USAGE,
            CliError::Parse(_) => code::PARSE,
            CliError::Config(_) => code::CONFIG,
            CliError::Integrity(_) => code::INTEGRITY,
            CliError::NoData(_) => code::NO_DATA,
        })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::Integrity { .. } | LedgerError::BadHeader(_) => CliError::Integrity(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<ClaimError> for CliError {
    fn from(e: ClaimError) -> Self {
        match e {
            ClaimError::Insufficient { .. } => CliError::NoData(e.to_string()),
            ClaimError::Model(m) => CliError::Usage(m.to_string()),
            ClaimError::Ledger(l) => l.into(),
        }
    }
}
