//! Regime configuration for the simulated provider.
//!
//! Regimes are written in TOML. Example (alias routing, 94% of the pinned
//! snapshot's pool reachable through the alias):
//!
//! ```toml
//! kind = "alias_routed"
//! rng_seed = 7
//!
//! [[model_pools.pinned]]
//! fingerprint = "fp_p0"
//! weight = 1.0
//!
//! [[alias_map]]
//! alias = "alias"
//! target = "pinned"
//! fraction = 0.94
//! ```
//!
//! Fields by kind:
//!
//! | kind              | required                         |
//! |-------------------|----------------------------------|
//! | `pinned_stable`   | `pool` with exactly one entry    |
//! | `rotating_pool`   | `pool`                           |
//! | `drift`           | `pool`, `schedule`               |
//! | `alias_routed`    | `alias_map`, target `model_pools`|
//! | `context_dependent` | `pool`, `context_rules`        |
//! | `concealed_update`| `pool`, `schedule`, `concealed`  |
//!
//! `fault` may be added to any kind.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::Digest256;
use crate::sim::SimError;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    PinnedStable,
    RotatingPool,
    Drift,
    AliasRouted,
    ContextDependent,
    ConcealedUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub fingerprint: String,
    pub weight: f64,
}

impl PoolEntry {
    pub fn new(fingerprint: impl Into<String>, weight: f64) -> Self {
        PoolEntry {
            fingerprint: fingerprint.into(),
            weight,
        }
    }
}

/// Replaces the base pool from `at` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledPool {
    pub at: Timestamp,
    pub pool: Vec<PoolEntry>,
}

/// Requests for `alias` are served from the alias's own pool (if any) plus
/// the first `ceil(fraction * |target pool|)` entries of a seeded
/// permutation of the target's pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliasRoute {
    pub alias: String,
    pub target: String,
    pub fraction: f64,
}

/// Overrides the pool for requests whose announced tags match. An absent
/// tag matches anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRule {
    #[serde(default)]
    pub account_tag: Option<String>,
    #[serde(default)]
    pub region_tag: Option<String>,
    pub pool: Vec<PoolEntry>,
}

/// Requests whose prompt digest is listed get `pinned_fingerprint`; all
/// others follow the scheduled base pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcealedSpec {
    pub public_prompt_digests: Vec<Digest256>,
    pub pinned_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum FaultMode {
    /// Respond with this HTTP status and an error body.
    Status { status: u16 },
    /// Respond 200 without the fingerprint field.
    OmitFingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Probability in [0, 1] that a request hits the fault.
    pub rate: f64,
    #[serde(flatten)]
    pub mode: FaultMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub rng_seed: u64,
    #[serde(default)]
    pub pool: Vec<PoolEntry>,
    #[serde(default)]
    pub schedule: Vec<ScheduledPool>,
    #[serde(default)]
    pub model_pools: BTreeMap<String, Vec<PoolEntry>>,
    #[serde(default)]
    pub alias_map: Vec<AliasRoute>,
    #[serde(default)]
    pub context_rules: Vec<ContextRule>,
    #[serde(default)]
    pub concealed: Option<ConcealedSpec>,
    #[serde(default)]
    pub fault: Option<FaultSpec>,
}

impl RegimeSpec {
    fn bare(kind: RegimeKind, rng_seed: u64) -> Self {
        RegimeSpec {
            kind,
            rng_seed,
            pool: Vec::new(),
            schedule: Vec::new(),
            model_pools: BTreeMap::new(),
            alias_map: Vec::new(),
            context_rules: Vec::new(),
            concealed: None,
            fault: None,
        }
    }

    pub fn pinned_stable(fingerprint: impl Into<String>, rng_seed: u64) -> Self {
        RegimeSpec {
            pool: vec![PoolEntry::new(fingerprint, 1.0)],
            ..Self::bare(RegimeKind::PinnedStable, rng_seed)
        }
    }

    pub fn rotating_pool(pool: Vec<PoolEntry>, rng_seed: u64) -> Self {
        RegimeSpec {
            pool,
            ..Self::bare(RegimeKind::RotatingPool, rng_seed)
        }
    }

    pub fn drift(pool: Vec<PoolEntry>, schedule: Vec<ScheduledPool>, rng_seed: u64) -> Self {
        RegimeSpec {
            pool,
            schedule,
            ..Self::bare(RegimeKind::Drift, rng_seed)
        }
    }

    pub fn alias_routed(
        model_pools: BTreeMap<String, Vec<PoolEntry>>,
        alias_map: Vec<AliasRoute>,
        rng_seed: u64,
    ) -> Self {
        RegimeSpec {
            model_pools,
            alias_map,
            ..Self::bare(RegimeKind::AliasRouted, rng_seed)
        }
    }

    pub fn context_dependent(pool: Vec<PoolEntry>, context_rules: Vec<ContextRule>, rng_seed: u64) -> Self {
        RegimeSpec {
            pool,
            context_rules,
            ..Self::bare(RegimeKind::ContextDependent, rng_seed)
        }
    }

    pub fn concealed_update(
        pool: Vec<PoolEntry>,
        schedule: Vec<ScheduledPool>,
        concealed: ConcealedSpec,
        rng_seed: u64,
    ) -> Self {
        RegimeSpec {
            pool,
            schedule,
            concealed: Some(concealed),
            ..Self::bare(RegimeKind::ConcealedUpdate, rng_seed)
        }
    }

    pub fn with_fault(mut self, fault: FaultSpec) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let spec: RegimeSpec = toml::from_str(text).map_err(|e| SimError::InvalidRegime(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimError::InvalidRegime(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("regime serializes to toml")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidRegime(msg));
        check_pool("pool", &self.pool, true)?;
        let mut last: Option<Timestamp> = None;
        for (i, s) in self.schedule.iter().enumerate() {
            check_pool(&format!("schedule[{i}].pool"), &s.pool, false)?;
            if last.is_some_and(|t| s.at <= t) {
                return bad(format!("schedule[{i}] is not strictly after the previous entry"));
            }
            last = Some(s.at);
        }
        for (name, pool) in &self.model_pools {
            check_pool(&format!("model_pools.{name}"), pool, false)?;
        }
        for r in &self.alias_map {
            if !(0.0..=1.0).contains(&r.fraction) {
                return bad(format!("alias {} routing fraction {} outside [0, 1]", r.alias, r.fraction));
            }
            if !self.model_pools.contains_key(&r.target) {
                return bad(format!("alias {} targets {} which has no model pool", r.alias, r.target));
            }
        }
        for (i, rule) in self.context_rules.iter().enumerate() {
            check_pool(&format!("context_rules[{i}].pool"), &rule.pool, false)?;
        }
        if let Some(f) = &self.fault {
            if !(0.0..=1.0).contains(&f.rate) {
                return bad(format!("fault rate {} outside [0, 1]", f.rate));
            }
        }
        match self.kind {
            RegimeKind::PinnedStable if self.pool.len() != 1 || !self.schedule.is_empty() => {
                bad("pinned_stable needs exactly one pool entry and no schedule".into())
            }
            RegimeKind::RotatingPool | RegimeKind::ContextDependent | RegimeKind::Drift | RegimeKind::ConcealedUpdate
                if self.pool.is_empty() =>
            {
                bad(format!("{:?} needs a non-empty pool", self.kind))
            }
            RegimeKind::Drift if self.schedule.is_empty() => bad("drift needs a schedule".into()),
            RegimeKind::AliasRouted if self.alias_map.is_empty() => bad("alias_routed needs alias_map".into()),
            RegimeKind::ContextDependent if self.context_rules.is_empty() => {
                bad("context_dependent needs context_rules".into())
            }
            RegimeKind::ConcealedUpdate if self.concealed.is_none() || self.schedule.is_empty() => {
                bad("concealed_update needs concealed and a schedule".into())
            }
            _ => Ok(()),
        }
    }
}

fn check_pool(what: &str, pool: &[PoolEntry], allow_empty: bool) -> Result<(), SimError> {
    if pool.is_empty() && !allow_empty {
        return Err(SimError::InvalidRegime(format!("{what} is empty")));
    }
    for e in pool {
        if !(e.weight.is_finite() && e.weight > 0.0) {
            return Err(SimError::InvalidRegime(format!(
                "{what}: weight of {} must be positive and finite",
                e.fingerprint
            )));
        }
        if e.fingerprint.is_empty() {
            return Err(SimError::InvalidRegime(format!("{what}: empty fingerprint")));
        }
    }
    Ok(())
}
