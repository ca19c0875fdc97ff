use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::regime::{FaultMode, PoolEntry, RegimeKind, RegimeSpec};
use super::SimError;
use crate::digest::{canonical_json, Digest256};
use crate::model::{prompt_digest, ConfigurationObservation, ObservationContext, Resolution};
use crate::probe::{ProbeRequest, Transport, TransportResponse};
use crate::time::{Clock, Timestamp};

/// One request as the simulator sees it.
#[derive(Debug, Clone, Copy)]
pub struct SimRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub seed: i64,
    pub account_tag: Option<&'a str>,
    pub region_tag: Option<&'a str>,
}

/// Ground truth for one request; one JSONL line in the emission log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emission {
    pub request_id: u64,
    pub at: Timestamp,
    pub model: String,
    pub prompt_digest: Digest256,
    pub account_tag: Option<String>,
    pub region_tag: Option<String>,
    /// Which pool served the request, e.g. `base#0`, `base#1` after the first
    /// scheduled swap, `pinned`, `alias:<name>`, `rule#<i>`, `model:<name>`.
    pub pool_label: String,
    pub fingerprint: Option<String>,
    pub status: u16,
}

impl Emission {
    /// Lightweight observation for analysis without going through HTTP or
    /// record sealing. The request digest is left zeroed.
    pub fn observation(&self) -> (ObservationContext, Resolution) {
        let ctx = ObservationContext {
            timestamp: self.at,
            account_tag: self.account_tag.clone().unwrap_or_else(|| "default".into()),
            region_tag: self.region_tag.clone().unwrap_or_else(|| "default".into()),
            request_digest: Digest256::ZERO,
            prompt_digest: self.prompt_digest,
        };
        let res = match (&self.fingerprint, self.status) {
            (Some(fp), 200..=299) => Resolution::Resolved(ConfigurationObservation::new(Some(fp.clone()), Digest256::ZERO)),
            _ => Resolution::Unresolvable,
        };
        (ctx, res)
    }
}

#[derive(Debug, Clone)]
pub struct SimReply {
    pub status: u16,
    pub body: Vec<u8>,
    pub emission: Emission,
}

struct Compiled {
    spec: RegimeSpec,
    alias_pools: BTreeMap<String, (String, Vec<PoolEntry>)>,
    public: HashSet<Digest256>,
}

impl Compiled {
    fn new(spec: RegimeSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let mut alias_pools = BTreeMap::new();
        for route in &spec.alias_map {
            let target = &spec.model_pools[&route.target];
            let mut order: Vec<usize> = (0..target.len()).collect();
            let alias_bits = u64::from_le_bytes(Digest256::of(route.alias.as_bytes()).0[..8].try_into().expect("8 bytes"));
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ alias_bits);
            order.shuffle(&mut rng);
            let take = (route.fraction * target.len() as f64 - 1e-9).ceil().max(0.0) as usize;
            let mut pool: Vec<PoolEntry> = spec.model_pools.get(&route.alias).cloned().unwrap_or_default();
            pool.extend(order[..take.min(target.len())].iter().map(|&i| target[i].clone()));
            alias_pools.insert(route.alias.clone(), (route.target.clone(), pool));
        }
        let public = spec
            .concealed
            .as_ref()
            .map(|c| c.public_prompt_digests.iter().copied().collect())
            .unwrap_or_default();
        Ok(Compiled {
            spec,
            alias_pools,
            public,
        })
    }

    /// Pool serving a request, and its label.
    fn select(&self, model: &str, prompt: &Digest256, req: &SimRequest<'_>, at: Timestamp) -> Pick<'_> {
        let spec = &self.spec;
        if spec.kind == RegimeKind::ConcealedUpdate && self.public.contains(prompt) {
            let fp = &spec.concealed.as_ref().expect("validated").pinned_fingerprint;
            return Pick::Fixed(fp, "pinned".into());
        }
        for (i, rule) in spec.context_rules.iter().enumerate() {
            let account_ok = rule.account_tag.as_deref().is_none_or(|t| req.account_tag == Some(t));
            let region_ok = rule.region_tag.as_deref().is_none_or(|t| req.region_tag == Some(t));
            if account_ok && region_ok {
                return Pick::Pool(&rule.pool, format!("rule#{i}"));
            }
        }
        if let Some((_, pool)) = self.alias_pools.get(model) {
            return Pick::Pool(pool, format!("alias:{model}"));
        }
        if let Some(pool) = spec.model_pools.get(model) {
            return Pick::Pool(pool, format!("model:{model}"));
        }
        let epoch = spec.schedule.iter().take_while(|s| s.at <= at).count();
        let pool = match epoch {
            0 => &spec.pool,
            k => &spec.schedule[k - 1].pool,
        };
        Pick::Pool(pool, format!("base#{epoch}"))
    }
}

enum Pick<'a> {
    Pool(&'a [PoolEntry], String),
    Fixed(&'a str, String),
}

struct State {
    regime: Compiled,
    rng: ChaCha8Rng,
    next_id: u64,
    log: Vec<Emission>,
    log_file: Option<BufWriter<File>>,
}

/// The simulated provider. Shared behind an `Arc`; requests are serialized
/// through one lock so draws stay in a single deterministic stream.
pub struct Simulator {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
}

impl Simulator {
    pub fn new(regime: RegimeSpec, clock: Arc<dyn Clock>) -> Result<Self, SimError> {
        let rng = ChaCha8Rng::seed_from_u64(regime.rng_seed);
        Ok(Simulator {
            state: Mutex::new(State {
                regime: Compiled::new(regime)?,
                rng,
                next_id: 0,
                log: Vec::new(),
                log_file: None,
            }),
            clock,
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Also append each emission to `path` as JSONL.
    pub fn log_to_file(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.lock().log_file = Some(BufWriter::new(file));
        Ok(())
    }

    /// Swaps the active regime and reseeds from its `rng_seed`. Request ids
    /// keep counting.
    pub fn set_regime(&self, regime: RegimeSpec) -> Result<(), SimError> {
        let compiled = Compiled::new(regime)?;
        let mut st = self.lock();
        st.rng = ChaCha8Rng::seed_from_u64(compiled.spec.rng_seed);
        st.regime = compiled;
        Ok(())
    }

    pub fn regime(&self) -> RegimeSpec {
        self.lock().regime.spec.clone()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Draws the emission for one request without building a body.
    pub fn draw(&self, req: &SimRequest<'_>) -> Emission {
        let at = self.clock.now();
        let pd = prompt_digest(req.prompt);
        let mut st = self.lock();
        let st = &mut *st;
        let id = st.next_id;
        st.next_id += 1;

        let fault = st.regime.spec.fault.clone().filter(|f| st.rng.random::<f64>() < f.rate);
        let (label, drawn) = match st.regime.select(req.model, &pd, req, at) {
            Pick::Fixed(fp, label) => (label, fp.to_string()),
            Pick::Pool(pool, label) => {
                let index = WeightedIndex::new(pool.iter().map(|e| e.weight)).expect("validated weights");
                (label, pool[index.sample(&mut st.rng)].fingerprint.clone())
            }
        };
        let (status, fingerprint) = match fault.map(|f| f.mode) {
            Some(FaultMode::Status { status }) => (status, None),
            Some(FaultMode::OmitFingerprint) => (200, None),
            None => (200, Some(drawn)),
        };
        let emission = Emission {
            request_id: id,
            at,
            model: req.model.to_string(),
            prompt_digest: pd,
            account_tag: req.account_tag.map(str::to_string),
            region_tag: req.region_tag.map(str::to_string),
            pool_label: label,
            fingerprint,
            status,
        };
        if let Some(f) = st.log_file.as_mut() {
            let mut line = canonical_json(&emission);
            line.push(b'\n');
            if let Err(e) = f.write_all(&line).and_then(|_| f.flush()) {
                tracing::warn!("emission log write failed: {e}");
            }
        }
        st.log.push(emission.clone());
        emission
    }

    /// Handles one request end to end: draw, then render a
    /// completions-shaped body.
    pub fn handle(&self, req: &SimRequest<'_>) -> SimReply {
        let emission = self.draw(req);
        let body = if (200..300).contains(&emission.status) {
            let text = format!(
                "sim-{}",
                &Digest256::of_parts(&[&req.seed.to_le_bytes(), emission.prompt_digest.as_bytes()]).to_hex()[..24]
            );
            let id = Digest256::of_parts(&[text.as_bytes(), emission.fingerprint.as_deref().unwrap_or("").as_bytes()]);
            let mut doc = json!({
                "id": format!("chatcmpl-sim-{}", &id.to_hex()[..16]),
                "object": "chat.completion",
                "model": req.model,
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }],
                "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0},
            });
            if let Some(fp) = &emission.fingerprint {
                doc["system_fingerprint"] = Value::String(fp.clone());
            }
            canonical_json(&doc)
        } else {
            canonical_json(&json!({"error": {"message": "simulated failure", "code": emission.status}}))
        };
        SimReply {
            status: emission.status,
            body,
            emission,
        }
    }

    /// Copy of every emission so far, in request-id order.
    pub fn emissions(&self) -> Vec<Emission> {
        self.lock().log.clone()
    }

    pub fn emission_count(&self) -> u64 {
        self.lock().next_id
    }

    pub fn write_emissions_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in self.lock().log.iter() {
            w.write_all(&canonical_json(e))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Pulls the fields the simulator routes on out of a chat-completions body.
pub(crate) fn parse_request_body(body: &Value) -> Option<(&str, &str, i64)> {
    let model = body.get("model")?.as_str()?;
    let prompt = body
        .get("messages")?
        .as_array()?
        .iter()
        .rev()
        .find_map(|m| m.get("content")?.as_str())?;
    let seed = body.get("seed").and_then(Value::as_i64).unwrap_or(0);
    Some((model, prompt, seed))
}

/// Calls the simulator directly, skipping sockets. Same records as over HTTP.
#[derive(Clone)]
pub struct InProcessTransport {
    sim: Arc<Simulator>,
}

impl InProcessTransport {
    pub fn new(sim: Arc<Simulator>) -> Self {
        InProcessTransport { sim }
    }
}

impl Transport for InProcessTransport {
    async fn send(&self, request: ProbeRequest) -> Result<TransportResponse, String> {
        let (model, prompt, seed) = parse_request_body(&request.body).ok_or("malformed request body")?;
        let (account, region) = match &request.context_headers {
            Some((a, r)) => (Some(a.as_str()), Some(r.as_str())),
            None => (None, None),
        };
        let reply = self.sim.handle(&SimRequest {
            model,
            prompt,
            seed,
            account_tag: account,
            region_tag: region,
        });
        Ok(TransportResponse {
            status: reply.status,
            body: reply.body,
        })
    }
}
