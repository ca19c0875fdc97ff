//! Fingerprint diversity and overlap metrics.
//!
//! Per identifier: number of observations, number of unique fingerprints and
//! the share of the modal fingerprint. Per identifier pair: shared unique
//! fingerprints, Jaccard similarity and the fraction of each side's set that
//! lies in the intersection. Unresolvable observations are counted in their
//! own column and never enter a set.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::model::{FingerprintSet, Observed};
use crate::probe::ObservationRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("histogram has no resolved observations")]
    EmptyHistogram,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintHistogram {
    pub counts: BTreeMap<String, u64>,
    /// Sum of `counts`.
    pub total: u64,
    /// Observations without a fingerprint.
    pub null_count: u64,
}

impl FingerprintHistogram {
    pub fn add(&mut self, fingerprint: Option<&str>) {
        match fingerprint {
            Some(fp) => {
                *self.counts.entry(fp.to_string()).or_insert(0) += 1;
                self.total += 1;
            }
            None => self.null_count += 1,
        }
    }

    pub fn unique(&self) -> usize {
        self.counts.len()
    }

    pub fn support(&self) -> FingerprintSet {
        self.counts.keys().cloned().collect()
    }

    /// Resolved and unresolvable observations together.
    pub fn observations(&self) -> u64 {
        self.total + self.null_count
    }
}

impl<'a> FromIterator<Option<&'a str>> for FingerprintHistogram {
    fn from_iter<T: IntoIterator<Item = Option<&'a str>>>(iter: T) -> Self {
        let mut h = FingerprintHistogram::default();
        for fp in iter {
            h.add(fp);
        }
        h
    }
}

pub fn histogram<O: Observed>(records: &[O]) -> FingerprintHistogram {
    let mut h = FingerprintHistogram::default();
    for r in records {
        h.add(r.resolution().fingerprint());
    }
    h
}

/// Most frequent fingerprint and its share of resolved observations. Ties go
/// to the lexicographically smallest key.
pub fn modal_share(h: &FingerprintHistogram) -> Result<(String, f64), AnalysisError> {
    if h.total == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    // BTreeMap iterates keys ascending; keep the first maximum seen.
    let (key, count) = h
        .counts
        .iter()
        .fold(None::<(&String, u64)>, |best, (k, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .expect("total > 0 implies a key");
    Ok((key.clone(), count as f64 / h.total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub a_size: usize,
    pub b_size: usize,
    pub shared: usize,
    pub jaccard: f64,
    pub a_covered: f64,
    pub b_covered: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn overlap(a: &FingerprintSet, b: &FingerprintSet) -> OverlapReport {
    let shared = a.intersection_len(b);
    let union = a.len() + b.len() - shared;
    OverlapReport {
        a_size: a.len(),
        b_size: b.len(),
        shared,
        jaccard: ratio(shared, union),
        a_covered: ratio(shared, a.len()),
        b_covered: ratio(shared, b.len()),
    }
}

/// Two decimals, as used for Jaccard values.
pub fn display_jaccard(x: f64) -> String {
    format!("{x:.2}")
}

/// Percentage with one decimal, e.g. `0.957 -> "95.7%"`.
pub fn display_percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Unique counts per campaign, for comparison with the whole-selection count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCampaignDiversity {
    pub campaigns: usize,
    pub min_unique: usize,
    pub mean_unique: f64,
    pub max_unique: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub identifier: String,
    pub n_obs: u64,
    pub null_count: u64,
    /// Unique fingerprints over the whole selection.
    pub unique: usize,
    pub top_fingerprint: Option<String>,
    pub top_share: Option<f64>,
    pub per_campaign: PerCampaignDiversity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub report: OverlapReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub rows: Vec<DiversityRow>,
    /// Pairs with at least one shared fingerprint, `a < b` by name.
    pub overlaps: Vec<OverlapRow>,
}

/// Builds the diversity table and every non-empty pairwise overlap. Rows are
/// ordered by identifier name.
pub fn diversity_report<'a, I>(records: I) -> DiversityReport
where
    I: IntoIterator<Item = &'a ObservationRecord>,
{
    let mut by_id: BTreeMap<&str, (FingerprintHistogram, BTreeMap<Uuid, FingerprintSet>)> = BTreeMap::new();
    for r in records {
        let (hist, campaigns) = by_id.entry(r.identifier.name()).or_default();
        let fp = r.resolution().fingerprint().map(str::to_string);
        hist.add(fp.as_deref());
        let set = campaigns.entry(r.campaign_id).or_default();
        if let Some(fp) = fp {
            set.insert(fp);
        }
    }

    let mut rows = Vec::with_capacity(by_id.len());
    let mut supports = Vec::with_capacity(by_id.len());
    for (name, (hist, campaigns)) in &by_id {
        let modal = modal_share(hist).ok();
        let uniques: Vec<usize> = campaigns.values().map(FingerprintSet::len).collect();
        rows.push(DiversityRow {
            identifier: name.to_string(),
            n_obs: hist.observations(),
            null_count: hist.null_count,
            unique: hist.unique(),
            top_fingerprint: modal.as_ref().map(|m| m.0.clone()),
            top_share: modal.map(|m| m.1),
            per_campaign: PerCampaignDiversity {
                campaigns: uniques.len(),
                min_unique: uniques.iter().copied().min().unwrap_or(0),
                mean_unique: ratio(uniques.iter().sum(), uniques.len()),
                max_unique: uniques.iter().copied().max().unwrap_or(0),
            },
        });
        supports.push((name.to_string(), hist.support()));
    }

    let mut overlaps = Vec::new();
    for (i, (a, sa)) in supports.iter().enumerate() {
        for (b, sb) in &supports[i + 1..] {
            let report = overlap(sa, sb);
            if report.shared > 0 {
                overlaps.push(OverlapRow {
                    a: a.clone(),
                    b: b.clone(),
                    report,
                });
            }
        }
    }
    DiversityReport { rows, overlaps }
}

impl DiversityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text rendering of both tables.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.identifier.len())
            .chain(self.overlaps.iter().map(|o| o.a.len().max(o.b.len())))
            .max()
            .unwrap_or(0)
            .max(10);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>6}  {:>9}  {:>6}  {:>13}",
            "identifier", "obs", "unique", "top share", "null", "per-campaign"
        );
        for r in &self.rows {
            let top = r.top_share.map(display_percent).unwrap_or_else(|| "-".into());
            let per = format!(
                "{}/{:.1}/{}",
                r.per_campaign.min_unique, r.per_campaign.mean_unique, r.per_campaign.max_unique
            );
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>6}  {:>9}  {:>6}  {:>13}",
                r.identifier, r.n_obs, r.unique, top, r.null_count, per
            );
        }
        out.push('\n');
        if self.overlaps.is_empty() {
            out.push_str("no shared fingerprints between identifiers\n");
        } else {
            let _ = writeln!(
                out,
                "{:<width$}  {:<width$}  {:>6}  {:>7}  {:>9}  {:>9}",
                "a", "b", "shared", "jaccard", "a covered", "b covered"
            );
            for o in &self.overlaps {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:<width$}  {:>6}  {:>7}  {:>9}  {:>9}",
                    o.a,
                    o.b,
                    o.report.shared,
                    display_jaccard(o.report.jaccard),
                    display_percent(o.report.a_covered),
                    display_percent(o.report.b_covered)
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> FingerprintSet {
        items.iter().copied().collect()
    }

    #[test]
    fn histogram_counts_present_fingerprints() {
        let h: FingerprintHistogram = [Some("fp_a"), Some("fp_a"), Some("fp_b")].into_iter().collect();
        assert_eq!(h.counts, BTreeMap::from([("fp_a".into(), 2), ("fp_b".into(), 1)]));
        assert_eq!(h.total, 3);
        assert_eq!(h.null_count, 0);
    }

    #[test]
    fn all_bottom_histogram() {
        let h: FingerprintHistogram = [None, None, None, None].into_iter().collect();
        assert!(h.counts.is_empty());
        assert_eq!(h.total, 0);
        assert_eq!(h.null_count, 4);
        assert_eq!(modal_share(&h), Err(AnalysisError::EmptyHistogram));
    }

    #[test]
    fn modal_share_and_tie_rule() {
        let h: FingerprintHistogram = [Some("x"), Some("x"), Some("y")].into_iter().collect();
        let (k, s) = modal_share(&h).unwrap();
        assert_eq!(k, "x");
        assert!((s - 2.0 / 3.0).abs() < 1e-12);

        let h: FingerprintHistogram = [Some("y"), Some("x")].into_iter().collect();
        assert_eq!(modal_share(&h).unwrap(), ("x".to_string(), 0.5));
    }

    #[test]
    fn identical_sets_overlap_fully() {
        let r = overlap(&set(&["a", "b"]), &set(&["a", "b"]));
        assert_eq!((r.shared, r.jaccard, r.a_covered, r.b_covered), (2, 1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_and_empty_sets() {
        let r = overlap(&set(&["a"]), &set(&["b"]));
        assert_eq!((r.shared, r.jaccard), (0, 0.0));
        let r = overlap(&set(&[]), &set(&[]));
        assert_eq!((r.shared, r.jaccard, r.a_covered, r.b_covered), (0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn display_rounding() {
        assert_eq!(display_jaccard(156.0 / 230.0), "0.68");
        assert_eq!(display_percent(156.0 / 223.0), "70.0%");
        assert_eq!(display_percent(156.0 / 163.0), "95.7%");
    }
}
