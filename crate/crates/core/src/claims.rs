//! Security claims and whether they are still bound to their referent.
//!
//! A claim records which identifier it is about, the context it was made in,
//! and a digest of the evidence seen at registration: the witness set of the
//! registration window, or an attested manifest digest. Registration never
//! asserts boundness. `check_bound` decides it later from observations, and
//! the statement text is never read.

use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::analysis::{overlap, OverlapReport};
use crate::attest::{attested_fingerprint, AttestationReport};
use crate::digest::Digest256;
use crate::ledger::{entry_digest, Ledger, LedgerEntry, LedgerError, LedgerRecord};
use crate::model::{
    evaluate_stability, ContextWindow, FingerprintSet, Identifier, ModelError, Observed, ResolutionVerdict,
    StabilityStatus,
};
use crate::time::Timestamp;

pub const DEFAULT_EQUIVALENCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum ClaimError {
    #[error("insufficient evidence: {observed} observations in window, {required} required")]
    Insufficient { observed: usize, required: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Evidence {
    Witness { witness_set: FingerprintSet },
    Attestation { manifest_digest: Digest256 },
}

impl Evidence {
    pub fn digest(&self) -> Digest256 {
        match self {
            Evidence::Witness { witness_set } => witness_set.digest(),
            Evidence::Attestation { manifest_digest } => *manifest_digest,
        }
    }

    /// The witness set a bound claim must keep observing.
    pub fn expected_witness(&self) -> FingerprintSet {
        match self {
            Evidence::Witness { witness_set } => witness_set.clone(),
            Evidence::Attestation { manifest_digest } => [attested_fingerprint(manifest_digest)].into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Claim {
    pub claim_id: Uuid,
    /// Opaque to the system.
    pub statement: String,
    pub identifier: Identifier,
    pub context: ContextWindow,
    pub evidence: Evidence,
    pub evidence_digest: Digest256,
    pub min_samples: usize,
    /// Observations in the registration window, unresolvable ones included.
    pub observation_count: usize,
    pub registered_at: Timestamp,
    pub record_digest: Digest256,
}

impl Claim {
    #[allow(clippy::too_many_arguments)]
    pub fn sealed(
        claim_id: Uuid,
        statement: impl Into<String>,
        identifier: Identifier,
        context: ContextWindow,
        evidence: Evidence,
        min_samples: usize,
        observation_count: usize,
        registered_at: Timestamp,
    ) -> Self {
        let mut c = Claim {
            claim_id,
            statement: statement.into(),
            identifier,
            context,
            evidence_digest: evidence.digest(),
            evidence,
            min_samples,
            observation_count,
            registered_at,
            record_digest: Digest256::ZERO,
        };
        c.record_digest = LedgerRecord::Claim(c.clone()).compute_digest();
        c
    }

    pub fn digest_is_valid(&self) -> bool {
        LedgerRecord::Claim(self.clone()).compute_digest() == self.record_digest
            && self.evidence.digest() == self.evidence_digest
    }
}

/// Builds a claim from observations already selected for `identifier`.
pub fn register_from<O: Observed>(
    statement: impl Into<String>,
    identifier: Identifier,
    window: ContextWindow,
    observations: &[O],
    min_samples: usize,
    now: Timestamp,
) -> Result<Claim, ClaimError> {
    let verdict = evaluate_stability(observations, &window, min_samples)?;
    if verdict.observation_count < min_samples {
        return Err(ClaimError::Insufficient {
            observed: verdict.observation_count,
            required: min_samples,
        });
    }
    Ok(Claim::sealed(
        Uuid::new_v4(),
        statement,
        identifier,
        window,
        Evidence::Witness {
            witness_set: verdict.witness_set,
        },
        min_samples,
        verdict.observation_count,
        now,
    ))
}

/// Registers against the ledger's observations and appends the claim.
pub fn register(
    ledger: &mut Ledger,
    statement: impl Into<String>,
    identifier: Identifier,
    window: ContextWindow,
    min_samples: usize,
    now: Timestamp,
) -> Result<Claim, ClaimError> {
    let obs = ledger.query(identifier.name(), &window)?;
    let claim = register_from(statement, identifier, window, &obs, min_samples, now)?;
    ledger.append(LedgerRecord::Claim(claim.clone()))?;
    Ok(claim)
}

/// A claim whose evidence is an attested manifest rather than a witness set.
/// Later checks expect verified responses carrying that manifest digest.
pub fn register_attested(
    statement: impl Into<String>,
    identifier: Identifier,
    window: ContextWindow,
    report: &AttestationReport,
    min_samples: usize,
    now: Timestamp,
) -> Result<Claim, ClaimError> {
    window.validate()?;
    if min_samples == 0 {
        return Err(ModelError::ZeroMinSamples.into());
    }
    Ok(Claim::sealed(
        Uuid::new_v4(),
        statement,
        identifier,
        window,
        Evidence::Attestation {
            manifest_digest: report.manifest_digest,
        },
        min_samples,
        0,
        now,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnboundReason {
    Unstable,
    Unresolvable,
    WitnessChanged,
    NoData,
}

impl fmt::Display for UnboundReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnboundReason::Unstable => "unstable",
            UnboundReason::Unresolvable => "unresolvable",
            UnboundReason::WitnessChanged => "witness_changed",
            UnboundReason::NoData => "no_data",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundOutcome {
    Bound,
    Unbound { reason: UnboundReason },
}

impl fmt::Display for BoundOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundOutcome::Bound => f.write_str("bound"),
            BoundOutcome::Unbound { reason } => write!(f, "unbound: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub outcome: BoundOutcome,
    /// The span actually evaluated: from the earlier start to the later end
    /// of the claim context and the check window.
    pub evaluated: ContextWindow,
    pub verdict: ResolutionVerdict,
    pub at_observations: usize,
}

/// Evaluates stability over the span covering the claim's context and `at`.
/// Everything observed between the two counts, so once a different
/// fingerprint has been seen no later window can bring the claim back.
pub fn check_bound_with<O: Observed>(claim: &Claim, observations: &[O], at: &ContextWindow) -> Result<BoundCheck, ModelError> {
    let at_verdict = evaluate_stability(observations, at, claim.min_samples)?;
    let evaluated = claim.context.hull(at);
    let verdict = evaluate_stability(observations, &evaluated, claim.min_samples)?;
    let expected = claim.evidence.expected_witness();

    let unbound = |reason| BoundOutcome::Unbound { reason };
    let outcome = if at_verdict.observation_count == 0 {
        unbound(UnboundReason::NoData)
    } else if at_verdict.status == StabilityStatus::Unresolvable {
        unbound(UnboundReason::Unresolvable)
    } else if verdict.status == StabilityStatus::Stable && verdict.witness_set == expected {
        BoundOutcome::Bound
    } else if expected.len() != 1 {
        unbound(UnboundReason::Unstable)
    } else if !expected.is_subset(&at_verdict.witness_set) {
        unbound(UnboundReason::WitnessChanged)
    } else if verdict.status == StabilityStatus::Insufficient {
        unbound(UnboundReason::NoData)
    } else {
        unbound(UnboundReason::Unstable)
    };
    Ok(BoundCheck {
        outcome,
        evaluated,
        verdict,
        at_observations: at_verdict.observation_count,
    })
}

pub fn check_bound(ledger: &Ledger, claim: &Claim, at: &ContextWindow) -> Result<BoundCheck, ClaimError> {
    let obs: Vec<_> = ledger.observations()?.filter(|r| r.identifier.name() == claim.identifier.name()).collect();
    Ok(check_bound_with(claim, &obs, at)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalenceVerdict {
    ConsistentWithSame,
    Distinct,
    Inconclusive,
}

impl fmt::Display for EquivalenceVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EquivalenceVerdict::ConsistentWithSame => "consistent_with_same",
            EquivalenceVerdict::Distinct => "distinct",
            EquivalenceVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub a: String,
    pub b: String,
    pub a_observations: usize,
    pub b_observations: usize,
    pub overlap: OverlapReport,
    pub threshold: f64,
    pub verdict: EquivalenceVerdict,
}

/// Compares the witness sets two identifiers produced inside `window`.
/// The verdict never asserts identity: at best the data are consistent with
/// the same system.
pub fn equivalence_from<A: Observed, B: Observed>(
    a: (&str, &[A]),
    b: (&str, &[B]),
    window: &ContextWindow,
    min_samples: usize,
    threshold: f64,
) -> Result<EquivalenceReport, ModelError> {
    let va = evaluate_stability(a.1, window, min_samples)?;
    let vb = evaluate_stability(b.1, window, min_samples)?;
    let report = overlap(&va.witness_set, &vb.witness_set);
    let enough = va.observation_count >= min_samples
        && vb.observation_count >= min_samples
        && !va.witness_set.is_empty()
        && !vb.witness_set.is_empty();
    let verdict = if !enough {
        EquivalenceVerdict::Inconclusive
    } else if report.shared == 0 {
        EquivalenceVerdict::Distinct
    } else if report.jaccard >= threshold {
        EquivalenceVerdict::ConsistentWithSame
    } else {
        EquivalenceVerdict::Inconclusive
    };
    Ok(EquivalenceReport {
        a: a.0.to_string(),
        b: b.0.to_string(),
        a_observations: va.observation_count,
        b_observations: vb.observation_count,
        overlap: report,
        threshold,
        verdict,
    })
}

pub fn equivalence(
    ledger: &Ledger,
    a: &str,
    b: &str,
    window: &ContextWindow,
    min_samples: usize,
    threshold: f64,
) -> Result<EquivalenceReport, ClaimError> {
    let oa = ledger.query(a, window)?;
    let ob = ledger.query(b, window)?;
    Ok(equivalence_from((a, &oa), (b, &ob), window, min_samples, threshold)?)
}

/// A claim plus the ledger entries its evidence was computed from, so that a
/// third party can recompute the evidence digest without the whole ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimBundle {
    pub claim: Claim,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("claim record digest does not match its contents")]
    ClaimDigest,
    #[error("entry {index}: {reason}")]
    Entry { index: u64, reason: String },
    #[error("evidence digest {expected} does not recompute; slice gives {actual}")]
    EvidenceMismatch { expected: Digest256, actual: Digest256 },
    #[error("attested claims carry no observation slice to recompute")]
    NotRecomputable,
}

pub fn export_bundle(ledger: &Ledger, claim: &Claim) -> Result<ClaimBundle, ClaimError> {
    let entries = ledger
        .observation_entries(claim.identifier.name(), &claim.context)?
        .cloned()
        .collect();
    Ok(ClaimBundle {
        claim: claim.clone(),
        entries,
    })
}

impl ClaimBundle {
    /// Checks every record and entry digest in the slice, then recomputes the
    /// witness set over the claim's context.
    pub fn verify(&self) -> Result<(), BundleError> {
        if !self.claim.digest_is_valid() {
            return Err(BundleError::ClaimDigest);
        }
        if matches!(self.claim.evidence, Evidence::Attestation { .. }) {
            return Err(BundleError::NotRecomputable);
        }
        let mut observations = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let fail = |reason: &str| BundleError::Entry {
                index: e.index,
                reason: reason.to_string(),
            };
            if e.record.compute_digest() != e.record.record_digest() {
                return Err(fail("record digest mismatch"));
            }
            if entry_digest(&e.record.record_digest(), &e.prev_digest) != e.entry_digest {
                return Err(fail("entry digest mismatch"));
            }
            match &e.record {
                LedgerRecord::Observation(r) if r.identifier.name() == self.claim.identifier.name() => {
                    observations.push(r)
                }
                _ => return Err(fail("not an observation of the claimed identifier")),
            }
        }
        let v = evaluate_stability(&observations, &self.claim.context, self.claim.min_samples)
            .map_err(|_| BundleError::ClaimDigest)?;
        let actual = v.witness_set.digest();
        if actual != self.claim.evidence_digest {
            return Err(BundleError::EvidenceMismatch {
                expected: self.claim.evidence_digest,
                actual,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConfigurationObservation, ObservationContext, Resolution};

    fn id() -> Identifier {
        Identifier::new("model-x", "http://127.0.0.1:1/").unwrap()
    }

    fn obs(ms: i64, fp: Option<&str>) -> (ObservationContext, Resolution) {
        let ctx = ObservationContext {
            timestamp: Timestamp::from_millis(ms),
            account_tag: "a".into(),
            region_tag: "r".into(),
            request_digest: Digest256::ZERO,
            prompt_digest: Digest256::ZERO,
        };
        let res = match fp {
            Some(fp) => Resolution::Resolved(ConfigurationObservation::new(Some(fp.into()), Digest256::ZERO)),
            None => Resolution::Unresolvable,
        };
        (ctx, res)
    }

    fn win(a: i64, b: i64) -> ContextWindow {
        ContextWindow::new(Timestamp::from_millis(a), Timestamp::from_millis(b)).unwrap()
    }

    fn claim_over(data: &[(ObservationContext, Resolution)], w: ContextWindow) -> Claim {
        register_from("s", id(), w, data, 2, Timestamp::from_millis(0)).unwrap()
    }

    #[test]
    fn stable_registration_has_singleton_evidence() {
        let data = vec![obs(1, Some("fp_a")), obs(2, Some("fp_a"))];
        let c = claim_over(&data, win(0, 10));
        assert_eq!(c.evidence.expected_witness(), ["fp_a"].into_iter().collect());
        assert!(c.digest_is_valid());
    }

    #[test]
    fn zero_observations_refused() {
        let data: Vec<(ObservationContext, Resolution)> = vec![];
        let err = register_from("s", id(), win(0, 10), &data, 2, Timestamp::from_millis(0)).unwrap_err();
        assert!(matches!(err, ClaimError::Insufficient { observed: 0, required: 2 }));
    }

    #[test]
    fn unstable_registration_allowed_but_never_bound() {
        let mut data = vec![obs(1, Some("a")), obs(2, Some("b"))];
        let c = claim_over(&data, win(0, 10));
        data.push(obs(20, Some("a")));
        let chk = check_bound_with(&c, &data, &win(15, 25)).unwrap();
        assert_eq!(
            chk.outcome,
            BoundOutcome::Unbound {
                reason: UnboundReason::Unstable
            }
        );
    }

    #[test]
    fn same_fingerprint_later_is_bound() {
        let data = vec![obs(1, Some("a")), obs(2, Some("a")), obs(20, Some("a"))];
        let c = claim_over(&data, win(0, 10));
        assert_eq!(check_bound_with(&c, &data, &win(15, 25)).unwrap().outcome, BoundOutcome::Bound);
    }

    #[test]
    fn different_fingerprint_later_is_witness_changed() {
        let data = vec![obs(1, Some("a")), obs(2, Some("a")), obs(20, Some("b"))];
        let c = claim_over(&data, win(0, 10));
        assert_eq!(
            check_bound_with(&c, &data, &win(15, 25)).unwrap().outcome.to_string(),
            "unbound: witness_changed"
        );
    }

    #[test]
    fn all_bottom_later_is_unresolvable() {
        let data = vec![obs(1, Some("a")), obs(2, Some("a")), obs(20, None), obs(21, None)];
        let c = claim_over(&data, win(0, 10));
        assert_eq!(
            check_bound_with(&c, &data, &win(15, 25)).unwrap().outcome,
            BoundOutcome::Unbound {
                reason: UnboundReason::Unresolvable
            }
        );
    }

    #[test]
    fn empty_check_window_is_no_data() {
        let data = vec![obs(1, Some("a")), obs(2, Some("a"))];
        let c = claim_over(&data, win(0, 10));
        assert_eq!(
            check_bound_with(&c, &data, &win(15, 25)).unwrap().outcome,
            BoundOutcome::Unbound {
                reason: UnboundReason::NoData
            }
        );
    }

    #[test]
    fn unbinding_is_monotone() {
        let data = vec![obs(1, Some("a")), obs(2, Some("a")), obs(12, Some("b")), obs(20, Some("a"))];
        let c = claim_over(&data, win(0, 10));
        // The window after the swap shows only "a" again, but the swap at 12
        // lies inside the evaluated span.
        let chk = check_bound_with(&c, &data, &win(18, 25)).unwrap();
        assert_ne!(chk.outcome, BoundOutcome::Bound);
    }

    #[test]
    fn statement_text_is_irrelevant() {
        let data = vec![obs(1, Some("a")), obs(2, Some("a")), obs(20, Some("a"))];
        let mut c1 = claim_over(&data, win(0, 10));
        let mut c2 = c1.clone();
        c1.statement = "refuses 99% of harmful prompts".into();
        c2.statement = String::new();
        let w = win(15, 25);
        assert_eq!(
            check_bound_with(&c1, &data, &w).unwrap(),
            check_bound_with(&c2, &data, &w).unwrap()
        );
    }

    #[test]
    fn equivalence_verdicts() {
        let a = vec![obs(1, Some("x")), obs(2, Some("y"))];
        let b = vec![obs(1, Some("x")), obs(2, Some("y"))];
        let c = vec![obs(1, Some("z")), obs(2, Some("w"))];
        let w = win(0, 10);
        let r = equivalence_from(("a", &a), ("a", &a), &w, 2, 0.8).unwrap();
        assert_eq!((r.verdict, r.overlap.jaccard), (EquivalenceVerdict::ConsistentWithSame, 1.0));
        let r = equivalence_from(("a", &a), ("b", &b), &w, 2, 0.8).unwrap();
        assert_eq!(r.verdict, EquivalenceVerdict::ConsistentWithSame);
        let r = equivalence_from(("a", &a), ("c", &c), &w, 2, 0.8).unwrap();
        assert_eq!(r.verdict, EquivalenceVerdict::Distinct);
        let r = equivalence_from(("a", &a[..1]), ("c", &c), &w, 2, 0.8).unwrap();
        assert_eq!(r.verdict, EquivalenceVerdict::Inconclusive);
        let half = vec![obs(1, Some("x")), obs(2, Some("q"))];
        let r = equivalence_from(("a", &a), ("h", &half), &w, 2, 0.8).unwrap();
        assert_eq!(r.verdict, EquivalenceVerdict::Inconclusive);
    }
}
