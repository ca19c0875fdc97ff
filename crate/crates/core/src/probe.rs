//! Probe campaigns: N identical completion requests against one identifier.
//!
//! Every request in a campaign carries the same canonical parameters, so any
//! variance in the returned fingerprint is attributable to the provider. Failed
//! requests are recorded, never retried: a retry would resample the routing
//! distribution and hide the failure.

use std::future::Future;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;
use uuid::Uuid;

use crate::digest::{digest_without, Digest256};
use crate::model::{prompt_digest, ConfigurationObservation, Identifier, ObservationContext, RequestParams};
use crate::time::{Clock, Timestamp};

/// Response field carrying the provider's configuration token.
pub const FINGERPRINT_FIELD: &str = "system_fingerprint";
pub const DEFAULT_PATH: &str = "/v1/chat/completions";
pub const DEFAULT_REPETITIONS: u32 = 100;
/// Request headers announcing the probe's context tags, sent only when
/// [`CampaignSpec::announce_context`] is set.
pub const ACCOUNT_HEADER: &str = "x-refcheck-account";
pub const REGION_HEADER: &str = "x-refcheck-region";

pub type SinkError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("environment variable {0} holding the bearer token is not set")]
    MissingToken(String),
    #[error("invalid campaign: {0}")]
    InvalidSpec(String),
    #[error("sink rejected record {} of campaign {}: {message}", summary.delivered, summary.campaign_id)]
    SinkFailed { summary: CampaignSummary, message: String },
}

/// Outcome of one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeOutcome {
    /// A 2xx response. The fingerprint may still be absent.
    Observed {
        fingerprint: Option<String>,
        response_digest: Digest256,
    },
    /// Transport error or non-2xx status.
    Failed { reason: String },
}

/// One probe result as persisted in the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub campaign_id: Uuid,
    pub sequence_no: u64,
    pub identifier: Identifier,
    pub context: ObservationContext,
    pub outcome: ProbeOutcome,
    /// `None` when no HTTP response arrived at all.
    pub http_status: Option<u16>,
    pub latency_ms: u64,
    /// Digest over the canonical form of every other field.
    pub record_digest: Digest256,
}

impl ObservationRecord {
    /// Builds a record and computes its digest.
    pub fn sealed(
        campaign_id: Uuid,
        sequence_no: u64,
        identifier: Identifier,
        context: ObservationContext,
        outcome: ProbeOutcome,
        http_status: Option<u16>,
        latency_ms: u64,
    ) -> Self {
        let mut record = ObservationRecord {
            campaign_id,
            sequence_no,
            identifier,
            context,
            outcome,
            http_status,
            latency_ms,
            record_digest: Digest256::ZERO,
        };
        record.record_digest = record.compute_digest();
        record
    }

    pub fn compute_digest(&self) -> Digest256 {
        digest_without(self, "record_digest")
    }

    pub fn digest_is_valid(&self) -> bool {
        self.compute_digest() == self.record_digest
    }

    pub fn config(&self) -> Option<ConfigurationObservation> {
        match &self.outcome {
            ProbeOutcome::Observed {
                fingerprint,
                response_digest,
            } => Some(ConfigurationObservation::new(fingerprint.clone(), *response_digest)),
            ProbeOutcome::Failed { .. } => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.outcome, ProbeOutcome::Failed { .. })
    }
}

/// Parameters of one campaign. Temperature, seed and prompt are fixed for
/// every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub identifier: Identifier,
    pub prompt: String,
    pub temperature: f64,
    pub seed: i64,
    pub max_tokens: u32,
    pub repetitions: u32,
    pub max_in_flight: u32,
    pub inter_request_delay_ms: u64,
    /// Environment variable holding the bearer token; `None` sends no
    /// Authorization header.
    pub auth_token_ref: Option<String>,
    pub account_tag: String,
    pub region_tag: String,
    pub path: String,
    pub request_timeout_ms: u64,
    pub announce_context: bool,
    /// Fixed id for reproducible runs; a random one is drawn otherwise.
    pub campaign_id: Option<Uuid>,
}

impl CampaignSpec {
    pub fn new(identifier: Identifier, prompt: impl Into<String>) -> Self {
        CampaignSpec {
            identifier,
            prompt: prompt.into(),
            temperature: 0.0,
            seed: 0,
            max_tokens: 64,
            repetitions: DEFAULT_REPETITIONS,
            max_in_flight: 4,
            inter_request_delay_ms: 0,
            auth_token_ref: None,
            account_tag: "default".into(),
            region_tag: "default".into(),
            path: DEFAULT_PATH.into(),
            request_timeout_ms: 30_000,
            announce_context: false,
            campaign_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.repetitions == 0 {
            return Err(ProbeError::InvalidSpec("repetitions must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ProbeError::InvalidSpec("max_in_flight must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProbeError::InvalidSpec("max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() {
            return Err(ProbeError::InvalidSpec("temperature must be finite".into()));
        }
        self.url()?;
        Ok(())
    }

    pub fn url(&self) -> Result<Url, ProbeError> {
        self.identifier
            .endpoint()
            .join(&self.path)
            .map_err(|e| ProbeError::InvalidSpec(format!("cannot join path {:?}: {e}", self.path)))
    }

    pub fn request_params(&self) -> RequestParams<'_> {
        RequestParams {
            model: self.identifier.name(),
            prompt: &self.prompt,
            seed: self.seed,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    /// Chat-completions request body.
    pub fn request_body(&self) -> Value {
        json!({
            "model": self.identifier.name(),
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature,
            "seed": self.seed,
            "max_tokens": self.max_tokens,
        })
    }
}

/// A fully prepared request. The bearer token never leaves this struct.
#[derive(Clone)]
pub struct ProbeRequest {
    pub url: Url,
    pub body: Value,
    pub bearer: Option<String>,
    pub context_headers: Option<(String, String)>,
    pub timeout: Duration,
}

impl std::fmt::Debug for ProbeRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProbeRequest")
            .field("url", &self.url.as_str())
            .field("body", &self.body)
            .field("bearer", &self.bearer.as_ref().map(|_| "<redacted>"))
            .field("context_headers", &self.context_headers)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct TransportResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Sends one request. Implemented over HTTP by [`HttpTransport`] and in
/// process by the simulator.
pub trait Transport: Send + Sync {
    fn send(&self, request: ProbeRequest) -> impl Future<Output = Result<TransportResponse, String>> + Send;
}

#[derive(Debug, Clone, Default)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for HttpTransport {
    async fn send(&self, request: ProbeRequest) -> Result<TransportResponse, String> {
        let mut builder = self
            .client
            .post(request.url)
            .timeout(request.timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(serde_json::to_vec(&request.body).map_err(|e| e.to_string())?);
        if let Some(token) = &request.bearer {
            builder = builder.bearer_auth(token);
        }
        if let Some((account, region)) = &request.context_headers {
            builder = builder.header(ACCOUNT_HEADER, account).header(REGION_HEADER, region);
        }
        let response = builder.send().await.map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.bytes().await.map_err(|e| e.to_string())?;
        Ok(TransportResponse {
            status,
            body: body.to_vec(),
        })
    }
}

/// Consumer of campaign records; receives them in sequence order.
pub trait RecordSink {
    fn accept(&mut self, record: ObservationRecord) -> Result<(), SinkError>;
}

impl RecordSink for Vec<ObservationRecord> {
    fn accept(&mut self, record: ObservationRecord) -> Result<(), SinkError> {
        self.push(record);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign_id: Uuid,
    pub identifier: String,
    pub requested: u32,
    pub delivered: u32,
    /// 2xx responses carrying a fingerprint.
    pub resolved: u32,
    /// 2xx responses without a fingerprint.
    pub missing_fingerprint: u32,
    pub failures: u32,
    pub wall_time_ms: u64,
    pub max_in_flight: u32,
    pub inter_request_delay_ms: u64,
}

/// Returns the configuration token from a response body, or `None` when the
/// body is not JSON or the field is absent, null, empty or not a string.
pub fn extract_fingerprint(response_body: &[u8]) -> Option<String> {
    let value: Value = serde_json::from_slice(response_body).ok()?;
    match value.get(FINGERPRINT_FIELD)? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        _ => None,
    }
}

/// Runs `spec.repetitions` requests with at most `spec.max_in_flight`
/// outstanding, delivering records to `sink` in sequence order.
pub async fn run_campaign<T, C, S>(
    spec: &CampaignSpec,
    transport: &T,
    clock: &C,
    sink: &mut S,
) -> Result<CampaignSummary, ProbeError>
where
    T: Transport,
    C: Clock + ?Sized,
    S: RecordSink + ?Sized,
{
    spec.validate()?;
    let bearer = match &spec.auth_token_ref {
        Some(var) => Some(std::env::var(var).map_err(|_| ProbeError::MissingToken(var.clone()))?),
        None => None,
    };
    let url = spec.url()?;
    let campaign_id = spec.campaign_id.unwrap_or_else(Uuid::new_v4);
    let request = ProbeRequest {
        url,
        body: spec.request_body(),
        bearer,
        context_headers: spec
            .announce_context
            .then(|| (spec.account_tag.clone(), spec.region_tag.clone())),
        timeout: Duration::from_millis(spec.request_timeout_ms),
    };
    let request_digest = spec.request_params().digest();
    let prompt_digest = prompt_digest(&spec.prompt);
    let delay = Duration::from_millis(spec.inter_request_delay_ms);

    let mut summary = CampaignSummary {
        campaign_id,
        identifier: spec.identifier.name().to_string(),
        requested: spec.repetitions,
        delivered: 0,
        resolved: 0,
        missing_fingerprint: 0,
        failures: 0,
        wall_time_ms: 0,
        max_in_flight: spec.max_in_flight,
        inter_request_delay_ms: spec.inter_request_delay_ms,
    };
    let started = Instant::now();
    let mut last_ts = Timestamp::MIN;

    let results = stream::iter(0..u64::from(spec.repetitions))
        .then(|seq| async move {
            if seq > 0 && !delay.is_zero() {
                tokio::time::sleep(delay).await;
            }
            seq
        })
        .map(|seq| {
            // Dispatch time; clamped so a campaign's timestamps never go backwards.
            let ts = clock.now().max(last_ts);
            last_ts = ts;
            let request = request.clone();
            async move {
                let sent = Instant::now();
                let result = transport.send(request).await;
                (seq, ts, result, sent.elapsed())
            }
        })
        .buffered(spec.max_in_flight as usize);
    let mut results = std::pin::pin!(results);

    while let Some((seq, timestamp, result, latency)) = results.next().await {
        let (outcome, http_status) = match result {
            Ok(resp) if (200..300).contains(&resp.status) => (
                ProbeOutcome::Observed {
                    fingerprint: extract_fingerprint(&resp.body),
                    response_digest: Digest256::of(&resp.body),
                },
                Some(resp.status),
            ),
            Ok(resp) => (
                ProbeOutcome::Failed {
                    reason: format!("http status {}", resp.status),
                },
                Some(resp.status),
            ),
            Err(e) => (ProbeOutcome::Failed { reason: e }, None),
        };
        match &outcome {
            ProbeOutcome::Observed { fingerprint: Some(_), .. } => summary.resolved += 1,
            ProbeOutcome::Observed { fingerprint: None, .. } => summary.missing_fingerprint += 1,
            ProbeOutcome::Failed { .. } => summary.failures += 1,
        }
        let record = ObservationRecord::sealed(
            campaign_id,
            seq,
            spec.identifier.clone(),
            ObservationContext {
                timestamp,
                account_tag: spec.account_tag.clone(),
                region_tag: spec.region_tag.clone(),
                request_digest,
                prompt_digest,
            },
            outcome,
            http_status,
            latency.as_millis() as u64,
        );
        if let Err(e) = sink.accept(record) {
            summary.wall_time_ms = started.elapsed().as_millis() as u64;
            return Err(ProbeError::SinkFailed {
                summary,
                message: e.to_string(),
            });
        }
        summary.delivered += 1;
    }
    summary.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(summary)
}
