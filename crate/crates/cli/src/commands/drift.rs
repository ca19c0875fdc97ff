use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Subcommand, ValueEnum};
use refcheck_core::drift::{
    self, CalibrationConfig, Channel, DriftAssessment, DriftStatus, ProbeSpec, ProbeSplit, DEFAULT_DRIFT_MIN_SAMPLES,
    DEFAULT_DRIFT_THRESHOLD,
};
use refcheck_core::model::ContextWindow;
use refcheck_core::time::Timestamp;

use super::{append_verdict, exit, ok, open_write, read_json, write_json};
use crate::error::{code, CliError};
use crate::Ctx;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ChannelArg {
    Fingerprint,
    ResponseDigest,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Fingerprint => Channel::Fingerprint,
            ChannelArg::ResponseDigest => Channel::ResponseDigest,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum DriftAction {
    /// Create a split file with public prompts and fresh private canaries
    SplitInit {
        /// Public prompt (repeatable)
        #[arg(long = "public", required = true)]
        public: Vec<String>,
        #[arg(long, default_value_t = 8)]
        private_count: usize,
        /// Rotation period in hours
        #[arg(long, default_value_t = 24 * 7)]
        period_hours: u64,
        /// Seed for canary generation; random when omitted
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace private canaries for every period elapsed since the epoch start
    Rotate {
        split: PathBuf,
        /// Evaluate rotation as of this time instead of now
        #[arg(long)]
        at: Option<Timestamp>,
    },
    /// Compare a baseline window with a current window
    Assess {
        #[arg(long)]
        identifier: String,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        baseline_from: Timestamp,
        #[arg(long)]
        baseline_to: Timestamp,
        #[arg(long)]
        current_from: Timestamp,
        #[arg(long)]
        current_to: Timestamp,
        #[arg(long)]
        threshold: Option<f64>,
        /// Observations required in each subset of each window
        #[arg(long, default_value_t = DEFAULT_DRIFT_MIN_SAMPLES)]
        min_samples: u64,
        #[arg(long, value_enum, default_value = "fingerprint")]
        channel: ChannelArg,
    },
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    window_pairs: Option<usize>,
    #[arg(long)]
    samples_per_subset: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quantile: Option<f64>,
}

fn window(from: Timestamp, to: Timestamp) -> Result<ContextWindow, CliError> {
    ContextWindow::new(from, to).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(ctx: &Ctx, action: DriftAction) -> Result<ExitCode, CliError> {
    match action {
        DriftAction::SplitInit {
            public,
            private_count,
            period_hours,
            seed,
            out,
        } => {
            let seed = seed.unwrap_or_else(rand::random);
            let public = public.into_iter().map(ProbeSpec::new).collect();
            let split = ProbeSplit::new(
                public,
                private_count,
                Duration::from_secs(period_hours * 3600),
                seed,
                Timestamp::now(),
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            write_json(&out, &split)?;
            ctx.emit(
                &format!(
                    "wrote {}: {} public, {} private\n",
                    out.display(),
                    split.public_probes.len(),
                    split.private_probes.len()
                ),
                &serde_json::json!({ "out": out, "epoch": split.epoch }),
            );
            ok()
        }
        DriftAction::Rotate { split: path, at } => {
            let split: ProbeSplit = read_json(&path)?;
            split.validate().map_err(|e| CliError::Parse(e.to_string()))?;
            let next = split.rotate(at.unwrap_or_else(Timestamp::now));
            if next.epoch != split.epoch {
                write_json(&path, &next)?;
            }
            ctx.emit(
                &format!("epoch {} (was {})\n", next.epoch, split.epoch),
                &serde_json::json!({ "epoch": next.epoch, "previous_epoch": split.epoch }),
            );
            ok()
        }
        DriftAction::Assess {
            identifier,
            split,
            baseline_from,
            baseline_to,
            current_from,
            current_to,
            threshold,
            min_samples,
            channel,
        } => {
            let split: ProbeSplit = read_json(&split)?;
            split.validate().map_err(|e| CliError::Parse(e.to_string()))?;
            let threshold = threshold.unwrap_or(ctx.cfg.thresholds.drift);
            let bw = window(baseline_from, baseline_to)?;
            let cw = window(current_from, current_to)?;
            let mut ledger = open_write(ctx)?;
            let baseline = ledger.query(&identifier, &bw)?;
            let current = ledger.query(&identifier, &cw)?;
            let a = drift::assess_channel(&baseline, &current, &split, threshold, min_samples, channel.into());
            let detail = serde_json::to_value(&a).expect("assessment serializes");
            append_verdict(&mut ledger, "drift", &identifier, &a.label(), detail.clone())?;
            let text = match &a {
                DriftAssessment::Verdict(v) => format!(
                    "{}\n  public divergence {:.4}\n  private divergence {:.4}\n  threshold {}\n",
                    v.status, v.public_divergence, v.private_divergence, v.threshold
                ),
                DriftAssessment::Inconclusive { counts, min_samples } => format!(
                    "inconclusive: need {min_samples} per subset; baseline {}/{} current {}/{} (public/private)\n",
                    counts.baseline_public, counts.baseline_private, counts.current_public, counts.current_private
                ),
            };
            ctx.emit(&text, &detail);
            Ok(exit(match a.status() {
                Some(DriftStatus::Consistent) => code::OK,
                Some(_) => code::NEGATIVE,
                None => code::NO_DATA,
            }))
        }
    }
}

pub fn calibrate(ctx: &Ctx, args: CalibrateArgs) -> Result<ExitCode, CliError> {
    let mut config = CalibrationConfig::default();
    if let Some(v) = args.window_pairs {
        config.window_pairs = v;
    }
    if let Some(v) = args.samples_per_subset {
        config.samples_per_subset = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.quantile {
        config.quantile = v;
    }
    if config.window_pairs == 0 || config.samples_per_subset == 0 || !(0.0..=1.0).contains(&config.quantile) {
        return Err(CliError::Usage("window pairs and samples must be positive, quantile in [0, 1]".into()));
    }
    let cal = drift::calibrate(&config);
    let text = format!(
        "null pairs {}\nsamples per subset {}\nquantile {} value {:.4}\nthreshold {:.2}\nshipped threshold {} flags {:.1}% of null pairs\n",
        config.window_pairs,
        config.samples_per_subset,
        config.quantile,
        cal.quantile_value,
        cal.threshold,
        DEFAULT_DRIFT_THRESHOLD,
        100.0 * cal.flag_rate(DEFAULT_DRIFT_THRESHOLD)
    );
    ctx.emit(
        &text,
        &serde_json::json!({
            "config": config,
            "quantile_value": cal.quantile_value,
            "threshold": cal.threshold,
            "shipped_threshold": DEFAULT_DRIFT_THRESHOLD,
            "shipped_flag_rate": cal.flag_rate(DEFAULT_DRIFT_THRESHOLD),
        }),
    );
    ok()
}
