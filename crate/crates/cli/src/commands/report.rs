use std::process::ExitCode;

use clap::Args;
use refcheck_core::analysis::diversity_report;

use super::{ok, open_read};
use crate::error::CliError;
use crate::{Ctx, WindowArgs};

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Restrict to these identifiers (repeatable)
    #[arg(long = "identifier")]
    identifiers: Vec<String>,
    #[command(flatten)]
    window: WindowArgs,
}

pub fn run(ctx: &Ctx, args: ReportArgs) -> Result<ExitCode, CliError> {
    let ledger = open_read(ctx)?;
    let window = args.window.window()?;
    let selected: Vec<_> = ledger
        .query_window(&window)?
        .into_iter()
        .filter(|r| args.identifiers.is_empty() || args.identifiers.iter().any(|i| i == r.identifier.name()))
        .collect();
    if selected.is_empty() {
        return Err(CliError::NoData("selection contains no observations".into()));
    }
    let report = diversity_report(selected);
    match ctx.format {
        crate::config::Format::Text => print!("{}", report.to_text()),
        crate::config::Format::Json => print!("{}", report.to_json()),
    }
    ok()
}
