//! Deterministic survey-shaped data set.
//!
//! Six model names, 116 campaigns of 100 requests each, spread over
//! 2026-03-11 .. 2026-05-10. Fingerprint pools are built so that the unique
//! counts, modal counts and the two alias/pinned overlaps are fixed exactly;
//! everything else (order within the window, latencies) comes from a seeded
//! ChaCha stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

use crate::digest::Digest256;
use crate::ledger::{Ledger, LedgerError, LedgerRecord};
use crate::model::{prompt_digest, Identifier, ObservationContext, RequestParams};
use crate::probe::{ObservationRecord, ProbeOutcome};
use crate::time::Timestamp;

pub const SURVEY_CAMPAIGNS: usize = 116;
pub const SURVEY_REPETITIONS: usize = 100;
pub const SURVEY_PROMPT: &str = "Reply with the single word: ready.";
pub const SURVEY_ENDPOINT: &str = "https://provider.invalid/";
const SURVEY_SEED: u64 = 0x0311_0510_2026;
const SURVEY_START_MS: i64 = 1_773_187_200_000; // 2026-03-11T00:00:00Z
const SURVEY_END_MS: i64 = 1_778_457_599_000; // 2026-05-10T23:59:59Z

/// One model name in the fixture and its target shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurveyModel {
    pub name: &'static str,
    pub unique: usize,
    /// Observations carried by the modal fingerprint, out of 11600.
    pub top_count: usize,
}

pub const SURVEY_MODELS: [SurveyModel; 6] = [
    SurveyModel { name: "gpt-4.1", unique: 223, top_count: 835 },
    SurveyModel { name: "gpt-4.1-2025-04-14", unique: 163, top_count: 974 },
    SurveyModel { name: "gpt-4o", unique: 137, top_count: 1206 },
    SurveyModel { name: "gpt-4o-2024-05-13", unique: 37, top_count: 2181 },
    SurveyModel { name: "gpt-4o-2024-08-06", unique: 129, top_count: 1183 },
    SurveyModel { name: "gpt-4o-2024-11-20", unique: 77, top_count: 1717 },
];

/// (alias, pinned, shared unique fingerprints).
pub const SURVEY_OVERLAPS: [(&str, &str, usize); 2] = [
    ("gpt-4.1", "gpt-4.1-2025-04-14", 156),
    ("gpt-4o", "gpt-4o-2024-08-06", 121),
];

pub fn observations_per_model() -> usize {
    SURVEY_CAMPAIGNS * SURVEY_REPETITIONS
}

fn fingerprint(family: &str, i: usize) -> String {
    let d = Digest256::of(format!("{family}/{i}").as_bytes());
    format!("fp_{}", &d.to_hex()[..10])
}

/// Unique fingerprints per model. Overlapping pairs draw their shared part
/// from one family list.
pub fn survey_pools() -> Vec<(SurveyModel, Vec<String>)> {
    SURVEY_MODELS
        .iter()
        .map(|m| {
            let mut pool = Vec::with_capacity(m.unique);
            let shared = SURVEY_OVERLAPS.iter().find(|(a, b, _)| *a == m.name || *b == m.name);
            if let Some((alias, _, n)) = shared {
                pool.extend((0..*n).map(|i| fingerprint(&format!("shared:{alias}"), i)));
            }
            let own = m.unique - pool.len();
            pool.extend((0..own).map(|i| fingerprint(m.name, i)));
            (*m, pool)
        })
        .collect()
}

/// Per-observation fingerprints for one model: the first pool entry appears
/// `top_count` times, every other entry at least once and strictly fewer
/// times than the first.
fn sequence(model: &SurveyModel, pool: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = observations_per_model();
    let rest = n - model.top_count;
    let others = pool.len() - 1;
    let (base, extra) = (rest / others, rest % others);
    assert!(base >= 1 && base + 1 < model.top_count, "shape of {} is unsatisfiable", model.name);
    let mut seq = Vec::with_capacity(n);
    seq.extend(std::iter::repeat_n(pool[0].clone(), model.top_count));
    for (i, fp) in pool[1..].iter().enumerate() {
        seq.extend(std::iter::repeat_n(fp.clone(), base + usize::from(i < extra)));
    }
    seq.shuffle(rng);
    seq
}

/// All 69 600 records, campaign by campaign, in timestamp order.
pub fn survey_records() -> Vec<ObservationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(SURVEY_SEED);
    let pools = survey_pools();
    let sequences: Vec<(SurveyModel, Identifier, Vec<String>)> = pools
        .iter()
        .map(|(m, pool)| {
            let id = Identifier::new(m.name, SURVEY_ENDPOINT).expect("static identifier");
            (*m, id, sequence(m, pool, &mut rng))
        })
        .collect();

    let pd = prompt_digest(SURVEY_PROMPT);
    let span = SURVEY_END_MS - SURVEY_START_MS;
    let slot = span / SURVEY_CAMPAIGNS as i64;
    let mut out = Vec::with_capacity(sequences.len() * observations_per_model());
    for c in 0..SURVEY_CAMPAIGNS {
        for (j, (m, id, seq)) in sequences.iter().enumerate() {
            let mut uuid_bytes = [0u8; 16];
            rng.fill(&mut uuid_bytes);
            let campaign_id = uuid::Builder::from_random_bytes(uuid_bytes).into_uuid();
            let request_digest = RequestParams {
                model: m.name,
                prompt: SURVEY_PROMPT,
                seed: 0,
                temperature: 0.0,
                max_tokens: 64,
            }
            .digest();
            let start = SURVEY_START_MS + c as i64 * slot + j as i64 * 600_000;
            for k in 0..SURVEY_REPETITIONS {
                let fp = &seq[c * SURVEY_REPETITIONS + k];
                let context = ObservationContext {
                    timestamp: Timestamp::from_millis(start + k as i64 * 1_500),
                    account_tag: "us-account".into(),
                    region_tag: "us".into(),
                    request_digest,
                    prompt_digest: pd,
                };
                let outcome = ProbeOutcome::Observed {
                    fingerprint: Some(fp.clone()),
                    response_digest: Digest256::of_parts(&[m.name.as_bytes(), fp.as_bytes()]),
                };
                out.push(ObservationRecord::sealed(
                    campaign_id,
                    k as u64,
                    id.clone(),
                    context,
                    outcome,
                    Some(200),
                    rng.random_range(180..900),
                ));
            }
        }
    }
    out
}

/// Survey ids are random-looking but fixed; this exposes them for tests.
pub fn campaign_ids(records: &[ObservationRecord]) -> Vec<Uuid> {
    let mut ids: Vec<Uuid> = records.iter().map(|r| r.campaign_id).collect();
    ids.dedup();
    ids
}

/// Writes the survey into `ledger` in one batch.
pub fn write_survey(ledger: &mut Ledger) -> Result<usize, LedgerError> {
    let records = survey_records();
    let n = records.len();
    ledger.append_all(records.into_iter().map(LedgerRecord::Observation))?;
    Ok(n)
}
