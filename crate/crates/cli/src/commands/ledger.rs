use std::path::PathBuf;
use std::process::ExitCode;

use clap::Subcommand;
use refcheck_core::fixtures;
use refcheck_core::ledger::{verify_file, ChainStatus, Ledger};

use super::{exit, ok};
use crate::error::{code, CliError};
use crate::Ctx;

#[derive(Subcommand, Debug)]
pub enum FixtureAction {
    /// Write the generated six-model survey to a new ledger
    Survey {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum LedgerAction {
    /// Recompute every digest in the chain
    Verify,
}

pub fn fixture(ctx: &Ctx, action: FixtureAction) -> Result<ExitCode, CliError> {
    let FixtureAction::Survey { out } = action;
    if out.exists() {
        return Err(CliError::Usage(format!("{} already exists", out.display())));
    }
    let mut ledger = Ledger::create(&out)?;
    let n = fixtures::write_survey(&mut ledger)?;
    ctx.emit(
        &format!("wrote {} observations to {}\n", n, out.display()),
        &serde_json::json!({ "out": out, "observations": n }),
    );
    ok()
}

pub fn run(ctx: &Ctx, action: LedgerAction) -> Result<ExitCode, CliError> {
    let LedgerAction::Verify = action;
    let path = ctx.ledger_path();
    if !path.exists() {
        return Err(CliError::NoData(format!("ledger {} does not exist", path.display())));
    }
    match verify_file(&path)? {
        ChainStatus::Intact { entries } => {
            ctx.emit(
                &format!("intact: {entries} entries\n"),
                &serde_json::json!({ "result": "intact", "entries": entries }),
            );
            ok()
        }
        ChainStatus::BadHeader(reason) => {
            ctx.emit(
                &format!("bad header: {reason}\n"),
                &serde_json::json!({ "result": "bad_header", "reason": reason }),
            );
            Ok(exit(code::INTEGRITY))
        }
        ChainStatus::Corrupt { index, reason } => {
            ctx.emit(
                &format!("corrupt at entry {index}: {reason}\n"),
                &serde_json::json!({ "result": "corrupt", "index": index, "reason": reason }),
            );
            Ok(exit(code::INTEGRITY))
        }
    }
}
