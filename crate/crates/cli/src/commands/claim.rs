use std::path::PathBuf;
use std::process::ExitCode;

use clap::Subcommand;
use refcheck_core::claims::{self, BoundOutcome, Claim, ClaimBundle, EquivalenceVerdict};
use refcheck_core::ledger::Ledger;
use refcheck_core::model::Identifier;
use refcheck_core::time::Timestamp;
use uuid::Uuid;

use super::{append_verdict, exit, ok, open_read, open_write, read_json, write_json};
use crate::error::{code, CliError};
use crate::{Ctx, WindowArgs};

#[derive(Subcommand, Debug)]
pub enum ClaimAction {
    /// Register a claim from the witness set observed in a window
    Register {
        /// Identifier name as recorded in the ledger
        #[arg(long, conflicts_with = "profile", required_unless_present = "profile")]
        identifier: Option<String>,
        #[arg(long)]
        profile: Option<String>,
        /// Free text stored with the claim
        #[arg(long)]
        statement: String,
        #[arg(long)]
        min_samples: Option<usize>,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Check whether a registered claim still holds in a window
    Check {
        #[arg(long)]
        claim_id: Uuid,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Compare the witness sets of two identifiers
    Equivalence {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_samples: Option<usize>,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// List registered claims
    List,
    /// Write a claim with the ledger slice backing it
    Export {
        #[arg(long)]
        claim_id: Uuid,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute a bundle's evidence without the ledger
    VerifyBundle { file: PathBuf },
}

fn find_claim(ledger: &Ledger, id: Uuid) -> Result<Claim, CliError> {
    ledger
        .claims()?
        .find(|c| c.claim_id == id)
        .cloned()
        .ok_or_else(|| CliError::NoData(format!("no claim {id} in the ledger")))
}

/// The endpoint is taken from the latest observation of `name`.
fn identifier_from_ledger(ledger: &Ledger, name: &str) -> Result<Identifier, CliError> {
    ledger
        .observations()?
        .filter(|r| r.identifier.name() == name)
        .last()
        .map(|r| r.identifier.clone())
        .ok_or_else(|| CliError::NoData(format!("no observations of {name} in the ledger")))
}

pub fn run(ctx: &Ctx, action: ClaimAction) -> Result<ExitCode, CliError> {
    match action {
        ClaimAction::Register {
            identifier,
            profile,
            statement,
            min_samples,
            window,
        } => {
            let window = window.closed_window()?;
            let min = min_samples.unwrap_or(ctx.cfg.thresholds.min_samples);
            let mut ledger = open_write(ctx)?;
            let id = match (identifier, profile) {
                (_, Some(p)) => {
                    let p = ctx.cfg.profile(&p)?;
                    Identifier::new(&p.identifier, &p.endpoint).map_err(|e| CliError::Config(e.to_string()))?
                }
                (Some(name), None) => identifier_from_ledger(&ledger, &name)?,
                (None, None) => return Err(CliError::Usage("give --identifier or --profile".into())),
            };
            let claim = claims::register(&mut ledger, statement, id, window, min, Timestamp::now())?;
            let expected = claim.evidence.expected_witness();
            let witness: Vec<&str> = expected.iter().collect();
            let text = format!(
                "registered claim {}\n  identifier {}\n  observations {}\n  witness {}\n",
                claim.claim_id,
                claim.identifier.name(),
                claim.observation_count,
                witness.join(", ")
            );
            ctx.emit(&text, &serde_json::to_value(&claim).expect("claim serializes"));
            ok()
        }
        ClaimAction::Check { claim_id, window } => {
            let at = window.closed_window()?;
            let mut ledger = open_write(ctx)?;
            let claim = find_claim(&ledger, claim_id)?;
            let check = claims::check_bound(&ledger, &claim, &at)?;
            let detail = serde_json::to_value(&check).expect("check serializes");
            append_verdict(&mut ledger, "claim_check", &claim_id.to_string(), &check.outcome.to_string(), detail.clone())?;
            ctx.emit(&format!("{}\n", check.outcome), &detail);
            match check.outcome {
                BoundOutcome::Bound => ok(),
                BoundOutcome::Unbound { .. } => Ok(exit(code::NEGATIVE)),
            }
        }
        ClaimAction::Equivalence {
            a,
            b,
            threshold,
            min_samples,
            window,
        } => {
            let window = window.window()?;
            let threshold = threshold.unwrap_or(ctx.cfg.thresholds.equivalence);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(CliError::Usage("--threshold must lie in [0, 1]".into()));
            }
            let min = min_samples.unwrap_or(ctx.cfg.thresholds.min_samples);
            let mut ledger = open_write(ctx)?;
            let report = claims::equivalence(&ledger, &a, &b, &window, min, threshold)?;
            let detail = serde_json::to_value(&report).expect("report serializes");
            append_verdict(&mut ledger, "equivalence", &format!("{a} {b}"), &report.verdict.to_string(), detail.clone())?;
            let text = format!(
                "{}\n  {} observations of {}, {} of {}\n  shared {} jaccard {:.3} threshold {}\n",
                report.verdict,
                report.a_observations,
                a,
                report.b_observations,
                b,
                report.overlap.shared,
                report.overlap.jaccard,
                threshold
            );
            ctx.emit(&text, &detail);
            Ok(exit(match report.verdict {
                EquivalenceVerdict::ConsistentWithSame => code::OK,
                EquivalenceVerdict::Distinct => code::NEGATIVE,
                EquivalenceVerdict::Inconclusive => code::NO_DATA,
            }))
        }
        ClaimAction::List => {
            let ledger = open_read(ctx)?;
            let all: Vec<&Claim> = ledger.claims()?.collect();
            let mut text = String::new();
            for c in &all {
                text.push_str(&format!(
                    "{} {} {}..{} {}\n",
                    c.claim_id,
                    c.identifier.name(),
                    c.context.start,
                    c.context.end,
                    c.statement
                ));
            }
            ctx.emit(&text, &serde_json::to_value(&all).expect("claims serialize"));
            ok()
        }
        ClaimAction::Export { claim_id, out } => {
            let ledger = open_read(ctx)?;
            let claim = find_claim(&ledger, claim_id)?;
            let bundle = claims::export_bundle(&ledger, &claim)?;
            write_json(&out, &bundle)?;
            ctx.emit(
                &format!("wrote {} with {} entries\n", out.display(), bundle.entries.len()),
                &serde_json::json!({ "out": out, "entries": bundle.entries.len() }),
            );
            ok()
        }
        ClaimAction::VerifyBundle { file } => {
            let bundle: ClaimBundle = read_json(&file)?;
            let result = bundle.verify();
            let (text, detail) = match &result {
                Ok(()) => ("verified\n".to_string(), serde_json::json!({ "result": "verified" })),
                Err(e) => (
                    format!("rejected: {e}\n"),
                    serde_json::json!({ "result": "rejected", "reason": e.to_string() }),
                ),
            };
            if ctx.ledger_configured() {
                let mut ledger = open_write(ctx)?;
                let label = detail["result"].as_str().unwrap_or_default().to_string();
                append_verdict(&mut ledger, "bundle", &bundle.claim.claim_id.to_string(), &label, detail.clone())?;
            }
            ctx.emit(&text, &detail);
            Ok(exit(if result.is_ok() { code::OK } else { code::NEGATIVE }))
        }
    }
}
