use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use refcheck_core::drift::ProbeSplit;
use refcheck_core::ledger::BufferedLedgerSink;
use refcheck_core::model::Identifier;
use refcheck_core::probe::{run_campaign, CampaignSpec, CampaignSummary, HttpTransport, ProbeError, DEFAULT_REPETITIONS};
use refcheck_core::time::SystemClock;

use super::{ok, open_write, read_json, runtime};
use crate::error::CliError;
use crate::Ctx;

pub const DEFAULT_PROMPT: &str = "Reply with the single word: ready.";

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Endpoint profile from the config file
    #[arg(long, conflicts_with_all = ["identifier", "endpoint"])]
    profile: Option<String>,
    /// Model name, when not using a profile
    #[arg(long, requires = "endpoint")]
    identifier: Option<String>,
    /// Base URL, when not using a profile
    #[arg(long, requires = "identifier")]
    endpoint: Option<String>,
    /// Requests per campaign
    #[arg(long = "n", default_value_t = DEFAULT_REPETITIONS)]
    n: u32,
    #[arg(long)]
    prompt: Option<String>,
    /// Probe every prompt of a split file, one campaign each
    #[arg(long, conflicts_with = "prompt")]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: i64,
    #[arg(long, default_value_t = 64)]
    max_tokens: u32,
    #[arg(long)]
    max_in_flight: Option<u32>,
    /// Pause between dispatches, milliseconds
    #[arg(long)]
    delay_ms: Option<u64>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Environment variable holding the bearer token
    #[arg(long)]
    token_env: Option<String>,
    #[arg(long)]
    account: Option<String>,
    #[arg(long)]
    region: Option<String>,
    /// Send account/region tags as request headers
    #[arg(long)]
    announce_context: bool,
}

fn base_spec(ctx: &Ctx, args: &ProbeArgs) -> Result<CampaignSpec, CliError> {
    let bad_id = |e: refcheck_core::model::ModelError| CliError::Config(e.to_string());
    let mut spec = match (&args.profile, &args.identifier, &args.endpoint) {
        (Some(name), _, _) => {
            let p = ctx.cfg.profile(name)?;
            let id = Identifier::new(&p.identifier, &p.endpoint).map_err(bad_id)?;
            let mut s = CampaignSpec::new(id, p.prompt.clone().unwrap_or_else(|| DEFAULT_PROMPT.into()));
            s.auth_token_ref = p.auth_token_ref.clone();
            if let Some(v) = &p.path {
                s.path = v.clone();
            }
            if let Some(v) = &p.account_tag {
                s.account_tag = v.clone();
            }
            if let Some(v) = &p.region_tag {
                s.region_tag = v.clone();
            }
            if let Some(v) = p.max_in_flight {
                s.max_in_flight = v;
            }
            if let Some(v) = p.inter_request_delay_ms {
                s.inter_request_delay_ms = v;
            }
            if let Some(v) = p.request_timeout_ms {
                s.request_timeout_ms = v;
            }
            s
        }
        (None, Some(id), Some(endpoint)) => {
            CampaignSpec::new(Identifier::new(id, endpoint).map_err(bad_id)?, DEFAULT_PROMPT)
        }
        _ => return Err(CliError::Usage("give --profile or both --identifier and --endpoint".into())),
    };
    spec.repetitions = args.n;
    spec.seed = args.seed;
    spec.max_tokens = args.max_tokens;
    spec.announce_context = args.announce_context;
    if let Some(p) = &args.prompt {
        spec.prompt = p.clone();
    }
    if let Some(v) = args.max_in_flight {
        spec.max_in_flight = v;
    }
    if let Some(v) = args.delay_ms {
        spec.inter_request_delay_ms = v;
    }
    if let Some(v) = args.timeout_ms {
        spec.request_timeout_ms = v;
    }
    if let Some(v) = &args.token_env {
        spec.auth_token_ref = Some(v.clone());
    }
    if let Some(v) = &args.account {
        spec.account_tag = v.clone();
    }
    if let Some(v) = &args.region {
        spec.region_tag = v.clone();
    }
    Ok(spec)
}

pub fn run(ctx: &Ctx, args: ProbeArgs) -> Result<ExitCode, CliError> {
    let base = base_spec(ctx, &args)?;
    let prompts: Vec<String> = match &args.split {
        Some(path) => {
            let split: ProbeSplit = read_json(path)?;
            split.public_probes.iter().chain(&split.private_probes).map(|p| p.prompt.clone()).collect()
        }
        None => vec![base.prompt.clone()],
    };
    let mut specs = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let mut s = base.clone();
        s.prompt = prompt;
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        specs.push(s);
    }
    // Fail on a missing token before the ledger is touched.
    if let Some(var) = &base.auth_token_ref {
        if std::env::var(var).is_err() {
            return Err(CliError::Config(format!("environment variable {var} holding the token is not set")));
        }
    }

    let mut ledger = open_write(ctx)?;
    let rt = runtime()?;
    let transport = HttpTransport::new();
    let mut summaries: Vec<CampaignSummary> = Vec::new();
    for spec in &specs {
        let mut sink = BufferedLedgerSink::new(&mut ledger);
        let result = rt.block_on(run_campaign(spec, &transport, &SystemClock, &mut sink));
        let summary = match result {
            Ok(s) => s,
            Err(ProbeError::MissingToken(var)) => {
                return Err(CliError::Config(format!("environment variable {var} holding the token is not set")))
            }
            Err(e) => return Err(CliError::Io(e.to_string())),
        };
        sink.commit()?;
        summaries.push(summary);
    }

    let mut text = String::new();
    for s in &summaries {
        let _ = writeln!(
            text,
            "campaign {} {}: {} requested, {} recorded, {} resolved, {} without fingerprint, {} failed ({} ms)",
            s.campaign_id,
            s.identifier,
            s.requested,
            s.delivered,
            s.resolved,
            s.missing_fingerprint,
            s.failures,
            s.wall_time_ms
        );
    }
    let _ = writeln!(text, "ledger {}: {} entries", ledger.path().map(|p| p.display().to_string()).unwrap_or_default(), ledger.len());
    ctx.emit(&text, &serde_json::json!({ "campaigns": summaries, "ledger_entries": ledger.len() }));
    ok()
}
