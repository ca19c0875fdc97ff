//! Drift and adaptation detection with a public/private probe split.
//!
//! Probes are split into a published set, which anyone can use to check the
//! endpoint, and a private canary set that is rotated on a schedule. Each
//! assessment compares a baseline window with a current window, per subset,
//! using the Jensen–Shannon divergence of the fingerprint frequencies:
//!
//! | public > t | private > t | verdict                |
//! |------------|-------------|------------------------|
//! | yes        | any         | `drift`                |
//! | no         | yes         | `adaptation_suspected` |
//! | no         | no          | `consistent`           |
//!
//! A provider tuned to look unchanged on the public probes shows up in the
//! second row. None of this defeats a provider that has optimized against
//! the private probes too.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisError, FingerprintHistogram};
use crate::digest::Digest256;
use crate::model::{prompt_digest, Observed, Resolution};
use crate::sim::{Emission, PoolEntry, RegimeSpec, SimRequest, Simulator};
use crate::time::{Timestamp, VirtualClock};

/// 95th percentile of the null divergence on the stationary calibration
/// regime (see [`CalibrationConfig::default`] and [`null_divergences`]),
/// rounded up to two decimals. The rounding leaves room for sampling error in
/// the percentile itself. Regenerate with `refcheck calibrate`.
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.11;

/// Resolved observations required per subset per window.
pub const DEFAULT_DRIFT_MIN_SAMPLES: u64 = 30;

#[derive(Debug, thiserror::Error)]
pub enum DriftError {
    #[error("public and private probes overlap on prompt digest {0}")]
    Overlap(Digest256),
    #[error("rotation period must be positive")]
    ZeroPeriod,
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Base-2 Jensen–Shannon divergence between the normalized histograms, in
/// [0, 1]. Unresolvable counts are ignored.
pub fn divergence(baseline: &FingerprintHistogram, current: &FingerprintHistogram) -> Result<f64, AnalysisError> {
    if baseline.total == 0 || current.total == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let (nb, nc) = (baseline.total as f64, current.total as f64);
    let support: BTreeSet<&String> = baseline.counts.keys().chain(current.counts.keys()).collect();
    let mut jsd = 0.0;
    for key in support {
        let p = baseline.counts.get(key).copied().unwrap_or(0) as f64 / nb;
        let q = current.counts.get(key).copied().unwrap_or(0) as f64 / nc;
        let m = 0.5 * (p + q);
        if p > 0.0 {
            jsd += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            jsd += 0.5 * q * (q / m).log2();
        }
    }
    Ok(jsd.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub prompt: String,
}

impl ProbeSpec {
    pub fn new(prompt: impl Into<String>) -> Self {
        ProbeSpec { prompt: prompt.into() }
    }

    pub fn digest(&self) -> Digest256 {
        prompt_digest(&self.prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSplit {
    pub public_probes: Vec<ProbeSpec>,
    pub private_probes: Vec<ProbeSpec>,
    pub rotation_period_ms: u64,
    pub rotation_seed: u64,
    pub epoch: u64,
    pub epoch_started: Timestamp,
    /// Digests of private probes from earlier epochs. Never reissued, and
    /// still classified as private when they show up in old windows.
    pub retired: BTreeSet<Digest256>,
}

impl ProbeSplit {
    pub fn new(
        public_probes: Vec<ProbeSpec>,
        private_count: usize,
        rotation_period: Duration,
        rotation_seed: u64,
        now: Timestamp,
    ) -> Result<Self, DriftError> {
        if rotation_period.is_zero() {
            return Err(DriftError::ZeroPeriod);
        }
        let mut split = ProbeSplit {
            public_probes,
            private_probes: Vec::new(),
            rotation_period_ms: rotation_period.as_millis() as u64,
            rotation_seed,
            epoch: 0,
            epoch_started: now,
            retired: BTreeSet::new(),
        };
        split.private_probes = split.fresh_private(0, private_count);
        split.validate()?;
        Ok(split)
    }

    pub fn rotation_period(&self) -> Duration {
        Duration::from_millis(self.rotation_period_ms)
    }

    pub fn validate(&self) -> Result<(), DriftError> {
        if self.rotation_period_ms == 0 {
            return Err(DriftError::ZeroPeriod);
        }
        let public: BTreeSet<Digest256> = self.public_probes.iter().map(ProbeSpec::digest).collect();
        for p in &self.private_probes {
            let d = p.digest();
            if public.contains(&d) {
                return Err(DriftError::Overlap(d));
            }
        }
        Ok(())
    }

    pub fn public_digests(&self) -> BTreeSet<Digest256> {
        self.public_probes.iter().map(ProbeSpec::digest).collect()
    }

    /// Current private probes plus every retired one.
    pub fn private_digests(&self) -> BTreeSet<Digest256> {
        let mut out: BTreeSet<Digest256> = self.private_probes.iter().map(ProbeSpec::digest).collect();
        out.extend(self.retired.iter().copied());
        out
    }

    /// Digest over the sorted digests of a probe list.
    pub fn set_digest(probes: &[ProbeSpec]) -> Digest256 {
        let sorted: BTreeSet<String> = probes.iter().map(|p| p.digest().to_hex()).collect();
        Digest256::of(sorted.into_iter().collect::<Vec<_>>().join("\n").as_bytes())
    }

    fn fresh_private(&self, epoch: u64, count: usize) -> Vec<ProbeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rotation_seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let public = self.public_digests();
        let mut out = Vec::with_capacity(count);
        let mut seen = BTreeSet::new();
        while out.len() < count {
            let nonce: u64 = rng.random();
            let p = ProbeSpec::new(format!(
                "Canary {epoch}.{}: summarize token {nonce:016x} in one word.",
                out.len()
            ));
            let d = p.digest();
            if public.contains(&d) || self.retired.contains(&d) || !seen.insert(d) {
                continue;
            }
            out.push(p);
        }
        out
    }

    /// Rotates the private set once per elapsed period. Before a full period
    /// has passed this is the identity.
    pub fn rotate(&self, now: Timestamp) -> ProbeSplit {
        let elapsed = now.millis().saturating_sub(self.epoch_started.millis());
        if elapsed < self.rotation_period_ms as i64 {
            return self.clone();
        }
        let periods = (elapsed / self.rotation_period_ms as i64) as u64;
        let mut next = self.clone();
        next.retired.extend(self.private_probes.iter().map(ProbeSpec::digest));
        next.epoch = self.epoch + periods;
        next.epoch_started = Timestamp::from_millis(
            self.epoch_started.millis() + (periods * self.rotation_period_ms) as i64,
        );
        next.private_probes = next.fresh_private(next.epoch, self.private_probes.len());
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftStatus {
    Consistent,
    Drift,
    AdaptationSuspected,
}

impl fmt::Display for DriftStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftStatus::Consistent => "consistent",
            DriftStatus::Drift => "drift",
            DriftStatus::AdaptationSuspected => "adaptation_suspected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub status: DriftStatus,
    pub public_divergence: f64,
    pub private_divergence: f64,
    pub threshold: f64,
    /// Resolved observations in (baseline, current), both subsets together.
    pub window_sizes: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub baseline_public: u64,
    pub baseline_private: u64,
    pub current_public: u64,
    pub current_private: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum DriftAssessment {
    Verdict(DriftVerdict),
    /// Too few samples in at least one subset; not a pass.
    Inconclusive { counts: SubsetCounts, min_samples: u64 },
}

impl DriftAssessment {
    pub fn status(&self) -> Option<DriftStatus> {
        match self {
            DriftAssessment::Verdict(v) => Some(v.status),
            DriftAssessment::Inconclusive { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            DriftAssessment::Verdict(v) => v.status.to_string(),
            DriftAssessment::Inconclusive { .. } => "inconclusive".into(),
        }
    }
}

/// What is histogrammed per observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    Fingerprint,
    ResponseDigest,
}

fn key(res: &Resolution, channel: Channel) -> Option<String> {
    match (res, channel) {
        (Resolution::Unresolvable, _) => None,
        (r, Channel::Fingerprint) => r.fingerprint().map(str::to_string),
        (Resolution::Resolved(obs), Channel::ResponseDigest) => Some(obs.response_digest.to_hex()),
    }
}

fn split_histograms<O: Observed>(
    window: &[O],
    public: &BTreeSet<Digest256>,
    private: &BTreeSet<Digest256>,
    channel: Channel,
) -> (FingerprintHistogram, FingerprintHistogram) {
    let (mut pubh, mut privh) = (FingerprintHistogram::default(), FingerprintHistogram::default());
    for o in window {
        let pd = &o.context().prompt_digest;
        let target = if public.contains(pd) {
            &mut pubh
        } else if private.contains(pd) {
            &mut privh
        } else {
            continue;
        };
        target.add(key(&o.resolution(), channel).as_deref());
    }
    (pubh, privh)
}

pub fn assess<O: Observed>(
    baseline: &[O],
    current: &[O],
    split: &ProbeSplit,
    threshold: f64,
    min_samples: u64,
) -> DriftAssessment {
    assess_channel(baseline, current, split, threshold, min_samples, Channel::Fingerprint)
}

pub fn assess_channel<O: Observed>(
    baseline: &[O],
    current: &[O],
    split: &ProbeSplit,
    threshold: f64,
    min_samples: u64,
    channel: Channel,
) -> DriftAssessment {
    let public = split.public_digests();
    let private = split.private_digests();
    let (bp, bq) = split_histograms(baseline, &public, &private, channel);
    let (cp, cq) = split_histograms(current, &public, &private, channel);
    let counts = SubsetCounts {
        baseline_public: bp.total,
        baseline_private: bq.total,
        current_public: cp.total,
        current_private: cq.total,
    };
    let min = min_samples.max(1);
    if [bp.total, bq.total, cp.total, cq.total].iter().any(|&n| n < min) {
        return DriftAssessment::Inconclusive {
            counts,
            min_samples: min,
        };
    }
    let public_divergence = divergence(&bp, &cp).expect("non-empty");
    let private_divergence = divergence(&bq, &cq).expect("non-empty");
    let status = if public_divergence > threshold {
        DriftStatus::Drift
    } else if private_divergence > threshold {
        DriftStatus::AdaptationSuspected
    } else {
        DriftStatus::Consistent
    };
    DriftAssessment::Verdict(DriftVerdict {
        status,
        public_divergence,
        private_divergence,
        threshold,
        window_sizes: (bp.total + bq.total, cp.total + cq.total),
    })
}

/// Sends `per_subset` public and `per_subset` private probes straight to the
/// simulator, alternating, one every `step` of virtual time.
pub fn sample_window(
    sim: &Simulator,
    clock: &VirtualClock,
    split: &ProbeSplit,
    model: &str,
    per_subset: usize,
    step: Duration,
) -> Vec<Emission> {
    let mut out = Vec::with_capacity(2 * per_subset);
    for i in 0..per_subset {
        for set in [&split.public_probes, &split.private_probes] {
            if set.is_empty() {
                continue;
            }
            let req = SimRequest {
                model,
                prompt: &set[i % set.len()].prompt,
                seed: 0,
                account_tag: None,
                region_tag: None,
            };
            out.push(sim.draw(&req));
            clock.advance(step);
        }
    }
    out
}

/// The stationary experiment that fixes [`DEFAULT_DRIFT_THRESHOLD`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub pool_size: usize,
    /// Weight of the first pool entry; the rest share the remainder evenly.
    pub top_weight: f64,
    pub samples_per_subset: usize,
    pub window_pairs: usize,
    pub quantile: f64,
    pub seed: u64,
    pub public_probes: usize,
    pub private_probes: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            pool_size: 37,
            top_weight: 0.188,
            samples_per_subset: 200,
            window_pairs: 1000,
            quantile: 0.95,
            seed: 0x5eed_ca11,
            public_probes: 8,
            private_probes: 8,
        }
    }
}

impl CalibrationConfig {
    pub fn pool(&self) -> Vec<PoolEntry> {
        let rest = (1.0 - self.top_weight) / (self.pool_size.saturating_sub(1).max(1)) as f64;
        (0..self.pool_size)
            .map(|i| PoolEntry::new(format!("fp_cal_{i:03}"), if i == 0 { self.top_weight } else { rest }))
            .collect()
    }

    pub fn split(&self, start: Timestamp) -> ProbeSplit {
        let public = (0..self.public_probes)
            .map(|i| ProbeSpec::new(format!("Public probe {i}: reply with the word ok.")))
            .collect();
        ProbeSplit::new(public, self.private_probes, Duration::from_secs(86_400 * 365), self.seed, start)
            .expect("calibration split is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: CalibrationConfig,
    /// Quantile of the null divergences, unrounded.
    pub quantile_value: f64,
    /// `quantile_value` rounded up to two decimals.
    pub threshold: f64,
    pub null_divergences: Vec<f64>,
}

impl Calibration {
    /// Fraction of the null pairs a threshold would flag.
    pub fn flag_rate(&self, threshold: f64) -> f64 {
        let n = self.null_divergences.len().max(1) as f64;
        self.null_divergences.iter().filter(|&&d| d > threshold).count() as f64 / n
    }
}

/// For each pair of windows drawn from a stationary rotating pool, the larger
/// of the public and private divergences: the statistic that raises an
/// alarm of either kind. One fresh simulator per pair so pairs are
/// independent.
pub fn null_divergences(config: &CalibrationConfig) -> Vec<f64> {
    let start = Timestamp::from_millis(1_767_225_600_000);
    let split = config.split(start);
    let public = split.public_digests();
    let private = split.private_digests();
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.window_pairs)
        .map(|_| {
            let clock = VirtualClock::new(start);
            let regime = RegimeSpec::rotating_pool(config.pool(), seeds.random());
            let sim = Simulator::new(regime, Arc::new(clock.clone())).expect("calibration regime is valid");
            let step = Duration::from_secs(1);
            let base: Vec<_> = sample_window(&sim, &clock, &split, "calibration", config.samples_per_subset, step)
                .iter()
                .map(Emission::observation)
                .collect();
            let cur: Vec<_> = sample_window(&sim, &clock, &split, "calibration", config.samples_per_subset, step)
                .iter()
                .map(Emission::observation)
                .collect();
            let (bp, bq) = split_histograms(&base, &public, &private, Channel::Fingerprint);
            let (cp, cq) = split_histograms(&cur, &public, &private, Channel::Fingerprint);
            let dp = divergence(&bp, &cp).expect("windows are non-empty");
            let dq = divergence(&bq, &cq).expect("windows are non-empty");
            dp.max(dq)
        })
        .collect()
}

/// Nearest-rank quantile of the null divergences.
pub fn calibrate(config: &CalibrationConfig) -> Calibration {
    let mut null = null_divergences(config);
    null.sort_by(f64::total_cmp);
    let rank = ((config.quantile * null.len() as f64).ceil() as usize).clamp(1, null.len().max(1));
    let quantile_value = null.get(rank - 1).copied().unwrap_or(0.0);
    let threshold = (quantile_value * 100.0).ceil() / 100.0;
    Calibration {
        config: config.clone(),
        quantile_value,
        threshold,
        null_divergences: null,
    }
}

/// Histogram of fingerprints by prompt digest, for reporting.
pub fn per_prompt_counts<O: Observed>(window: &[O]) -> BTreeMap<Digest256, FingerprintHistogram> {
    let mut out: BTreeMap<Digest256, FingerprintHistogram> = BTreeMap::new();
    for o in window {
        out.entry(o.context().prompt_digest)
            .or_default()
            .add(o.resolution().fingerprint());
    }
    out
}
