//! Scoring analyzer verdicts against the simulator's emission log.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::engine::Emission;
use super::SimError;

/// One analyzer decision over a pair of windows, each given as the request
/// ids it covered. `flagged` is true when the analyzer reported a change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPairVerdict {
    pub baseline_ids: Vec<u64>,
    pub current_ids: Vec<u64>,
    pub flagged: bool,
}

/// Confusion counts. "Positive" means the serving pool changed between the
/// two windows according to the emission log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

impl AgreementReport {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    /// Fraction of verdicts matching the truth; 1.0 for an empty report.
    pub fn agreement(&self) -> f64 {
        match self.total() {
            0 => 1.0,
            n => (self.true_positive + self.true_negative) as f64 / n as f64,
        }
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        let neg = self.false_positive + self.true_negative;
        (neg > 0).then(|| self.false_positive as f64 / neg as f64)
    }

    pub fn detection_rate(&self) -> Option<f64> {
        let pos = self.true_positive + self.false_negative;
        (pos > 0).then(|| self.true_positive as f64 / pos as f64)
    }
}

/// A window pair truly changed iff the sets of pools that served the two
/// windows differ.
pub fn ground_truth_diff(emissions: &[Emission], verdicts: &[WindowPairVerdict]) -> Result<AgreementReport, SimError> {
    let by_id: HashMap<u64, &Emission> = emissions.iter().map(|e| (e.request_id, e)).collect();
    let pools = |ids: &[u64]| -> Result<BTreeSet<&str>, SimError> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|e| e.pool_label.as_str())
                    .ok_or(SimError::UnknownRequestId(*id))
            })
            .collect()
    };
    let mut report = AgreementReport::default();
    for v in verdicts {
        let changed = pools(&v.baseline_ids)? != pools(&v.current_ids)?;
        let slot = match (changed, v.flagged) {
            (true, true) => &mut report.true_positive,
            (false, true) => &mut report.false_positive,
            (false, false) => &mut report.true_negative,
            (true, false) => &mut report.false_negative,
        };
        *slot += 1;
    }
    Ok(report)
}
