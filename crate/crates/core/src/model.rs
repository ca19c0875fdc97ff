//! Identifiers, observation contexts and the stability decision procedure.
//!
//! An [`Identifier`] is the handle a claim uses (a public model name plus the
//! endpoint serving it). Each probe yields a [`Resolution`]: either a
//! [`ConfigurationObservation`] carrying the provider's configuration token, or
//! `Unresolvable` when the endpoint gave nothing usable. [`evaluate_stability`]
//! decides whether an identifier resolved to one configuration across a
//! [`ContextWindow`].
//!
//! Two configurations are considered the same exactly when their fingerprint
//! strings are equal. The token is the only configuration observable at the
//! metadata layer, so this is a proxy: a provider could change configuration
//! without changing the token, or rotate tokens without a material change.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::digest::{canonical_json, Digest256};
use crate::probe::ObservationRecord;
use crate::time::Timestamp;

/// Default minimum observation count for a stable verdict.
pub const DEFAULT_MIN_SAMPLES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("identifier name must be non-empty")]
    EmptyName,
    #[error("endpoint {0:?} is not an absolute URL")]
    BadEndpoint(String),
    #[error("malformed context window: start {start} is after end {end}")]
    MalformedWindow { start: Timestamp, end: Timestamp },
    #[error("min_samples must be at least 1")]
    ZeroMinSamples,
}

/// Public model name plus the URL of the API serving it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawIdentifier", into = "RawIdentifier")]
pub struct Identifier {
    name: String,
    endpoint: Url,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIdentifier {
    name: String,
    endpoint: String,
}

impl TryFrom<RawIdentifier> for Identifier {
    type Error = ModelError;

    fn try_from(raw: RawIdentifier) -> Result<Self, Self::Error> {
        Identifier::new(raw.name, &raw.endpoint)
    }
}

impl From<Identifier> for RawIdentifier {
    fn from(id: Identifier) -> Self {
        RawIdentifier {
            name: id.name,
            endpoint: id.endpoint.into(),
        }
    }
}

impl Identifier {
    pub fn new(name: impl Into<String>, endpoint: &str) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ModelError::EmptyName);
        }
        // Url::parse rejects relative references outright.
        let endpoint = Url::parse(endpoint).map_err(|_| ModelError::BadEndpoint(endpoint.to_string()))?;
        if endpoint.cannot_be_a_base() {
            return Err(ModelError::BadEndpoint(endpoint.to_string()));
        }
        Ok(Identifier { name, endpoint })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn endpoint(&self) -> &Url {
        &self.endpoint
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.endpoint)
    }
}

/// Where and when a probe was issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationContext {
    pub timestamp: Timestamp,
    pub account_tag: String,
    pub region_tag: String,
    /// Digest of the canonical request parameters, see [`RequestParams`].
    pub request_digest: Digest256,
    /// Digest of the prompt text alone; lets probe sets be split by prompt.
    pub prompt_digest: Digest256,
}

/// The parameters a probe holds fixed. Their canonical JSON is hashed into
/// `request_digest`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestParams<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub seed: i64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RequestParams<'_> {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn digest(&self) -> Digest256 {
        Digest256::of(&self.canonical_bytes())
    }
}

pub fn prompt_digest(prompt: &str) -> Digest256 {
    Digest256::of(prompt.as_bytes())
}

/// What one response revealed about the serving configuration.
///
/// Equality compares fingerprints only; the response digest is a separate
/// behavioral channel.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigurationObservation {
    pub fingerprint: Option<String>,
    pub response_digest: Digest256,
}

impl ConfigurationObservation {
    /// Empty fingerprint strings are normalized to `None`.
    pub fn new(fingerprint: Option<String>, response_digest: Digest256) -> Self {
        ConfigurationObservation {
            fingerprint: fingerprint.filter(|f| !f.is_empty()),
            response_digest,
        }
    }
}

impl PartialEq for ConfigurationObservation {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
    }
}

/// Result of resolving an identifier once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    /// A usable observation; the fingerprint is always present.
    Resolved(ConfigurationObservation),
    Unresolvable,
}

impl Resolution {
    pub fn fingerprint(&self) -> Option<&str> {
        match self {
            Resolution::Resolved(obs) => obs.fingerprint.as_deref(),
            Resolution::Unresolvable => None,
        }
    }
}

/// Projects a record onto its configuration observation. Transport and
/// HTTP failures, and successful responses without a fingerprint, are
/// unresolvable.
pub fn resolve_once(record: &ObservationRecord) -> Resolution {
    match record.config() {
        Some(obs) if obs.fingerprint.is_some() => Resolution::Resolved(obs.clone()),
        _ => Resolution::Unresolvable,
    }
}

/// A closed time interval with optional tag filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextWindow {
    pub start: Timestamp,
    pub end: Timestamp,
    pub account_tag: Option<String>,
    pub region_tag: Option<String>,
}

impl ContextWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, ModelError> {
        let w = ContextWindow {
            start,
            end,
            account_tag: None,
            region_tag: None,
        };
        w.validate()?;
        Ok(w)
    }

    /// Every instant, no tag filters.
    pub fn unbounded() -> Self {
        ContextWindow {
            start: Timestamp::MIN,
            end: Timestamp::MAX,
            account_tag: None,
            region_tag: None,
        }
    }

    pub fn with_account(mut self, tag: impl Into<String>) -> Self {
        self.account_tag = Some(tag.into());
        self
    }

    pub fn with_region(mut self, tag: impl Into<String>) -> Self {
        self.region_tag = Some(tag.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.start > self.end {
            return Err(ModelError::MalformedWindow {
                start: self.start,
                end: self.end,
            });
        }
        Ok(())
    }

    pub fn contains(&self, ctx: &ObservationContext) -> bool {
        ctx.timestamp >= self.start
            && ctx.timestamp <= self.end
            && self.account_tag.as_ref().is_none_or(|t| *t == ctx.account_tag)
            && self.region_tag.as_ref().is_none_or(|t| *t == ctx.region_tag)
    }

    /// Smallest interval covering both windows, keeping `self`'s tag filters.
    pub fn hull(&self, other: &ContextWindow) -> ContextWindow {
        ContextWindow {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
            account_tag: self.account_tag.clone(),
            region_tag: self.region_tag.clone(),
        }
    }
}

/// Distinct fingerprint strings, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FingerprintSet(BTreeSet<String>);

impl FingerprintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fp: impl Into<String>) -> bool {
        self.0.insert(fp.into())
    }

    pub fn contains(&self, fp: &str) -> bool {
        self.0.contains(fp)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &FingerprintSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn is_subset(&self, other: &FingerprintSet) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Digest of the sorted JSON array of members.
    pub fn digest(&self) -> Digest256 {
        Digest256::of(&canonical_json(&self.0))
    }
}

impl<S: Into<String>> FromIterator<S> for FingerprintSet {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        FingerprintSet(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    /// Exactly one fingerprint and at least `min_samples` observations.
    Stable,
    /// Two or more distinct fingerprints.
    Unstable,
    /// No observations, or none carried a fingerprint.
    Unresolvable,
    /// One fingerprint, but fewer than `min_samples` observations.
    Insufficient,
}

impl fmt::Display for StabilityStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityStatus::Stable => "stable",
            StabilityStatus::Unstable => "unstable",
            StabilityStatus::Unresolvable => "unresolvable",
            StabilityStatus::Insufficient => "insufficient",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionVerdict {
    pub status: StabilityStatus,
    pub witness_set: FingerprintSet,
    /// Observations inside the window, unresolvable ones included.
    pub observation_count: usize,
}

/// Anything that pairs a context with a resolution.
pub trait Observed {
    fn context(&self) -> &ObservationContext;
    fn resolution(&self) -> Resolution;
}

impl Observed for ObservationRecord {
    fn context(&self) -> &ObservationContext {
        &self.context
    }

    fn resolution(&self) -> Resolution {
        resolve_once(self)
    }
}

impl Observed for (ObservationContext, Resolution) {
    fn context(&self) -> &ObservationContext {
        &self.0
    }

    fn resolution(&self) -> Resolution {
        self.1.clone()
    }
}

impl<T: Observed> Observed for &T {
    fn context(&self) -> &ObservationContext {
        (**self).context()
    }

    fn resolution(&self) -> Resolution {
        (**self).resolution()
    }
}

/// Decides `stable(r, i, C)` for the observations that fall inside `window`.
pub fn evaluate_stability<O: Observed>(
    observations: &[O],
    window: &ContextWindow,
    min_samples: usize,
) -> Result<ResolutionVerdict, ModelError> {
    window.validate()?;
    if min_samples == 0 {
        return Err(ModelError::ZeroMinSamples);
    }
    let mut witness_set = FingerprintSet::new();
    let mut observation_count = 0;
    for obs in observations.iter().filter(|o| window.contains(o.context())) {
        observation_count += 1;
        if let Some(fp) = obs.resolution().fingerprint() {
            witness_set.insert(fp);
        }
    }
    let status = match witness_set.len() {
        0 => StabilityStatus::Unresolvable,
        1 if observation_count >= min_samples => StabilityStatus::Stable,
        1 => StabilityStatus::Insufficient,
        _ => StabilityStatus::Unstable,
    };
    Ok(ResolutionVerdict {
        status,
        witness_set,
        observation_count,
    })
}
