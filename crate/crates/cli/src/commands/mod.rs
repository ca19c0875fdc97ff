pub mod attest;
pub mod claim;
pub mod drift;
pub mod ledger;
pub mod probe;
pub mod report;
pub mod sim;

use std::path::Path;
use std::process::ExitCode;

use refcheck_core::ledger::{Ledger, LedgerRecord, VerdictRecord};
use refcheck_core::time::Timestamp;
use serde::de::DeserializeOwned;

use crate::error::{code, CliError};
use crate::Ctx;

pub fn exit(c: u8) -> ExitCode {
    ExitCode::from(c)
}

pub fn ok() -> Result<ExitCode, CliError> {
    Ok(exit(code::OK))
}

/// Read-only handle. A missing file is an empty selection, not an i/o error.
pub fn open_read(ctx: &Ctx) -> Result<Ledger, CliError> {
    let path = ctx.ledger_path();
    if !path.exists() {
        return Err(CliError::NoData(format!("ledger {} does not exist", path.display())));
    }
    Ok(Ledger::open_read_only(&path)?)
}

pub fn open_write(ctx: &Ctx) -> Result<Ledger, CliError> {
    Ok(Ledger::open_or_create(ctx.ledger_path())?)
}

pub fn append_verdict(
    ledger: &mut Ledger,
    kind: &str,
    subject: &str,
    verdict: &str,
    detail: serde_json::Value,
) -> Result<(), CliError> {
    let record = VerdictRecord::sealed(kind, subject, verdict, detail, Timestamp::now());
    ledger.append(LedgerRecord::Verdict(record))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::from)
}
