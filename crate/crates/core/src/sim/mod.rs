//! Simulated completions provider with scripted fingerprint regimes.
//!
//! The simulator is the ground truth for every analyzer: each response's
//! fingerprint is drawn from the pool the active regime selects, and every
//! draw is written to an emission log. Draws come from one ChaCha stream
//! seeded by `rng_seed`, so the same regime and request sequence always
//! produce the same emissions. Time comes from an injected [`Clock`].

mod engine;
mod regime;
mod server;
mod truth;

pub use engine::{Emission, InProcessTransport, SimReply, SimRequest, Simulator};
pub use regime::{
    AliasRoute, ConcealedSpec, ContextRule, FaultMode, FaultSpec, PoolEntry, RegimeKind, RegimeSpec, ScheduledPool,
};
pub use server::{serve, ServeOptions, SimHandle, REGIME_PATH, EMISSIONS_PATH};
pub use truth::{ground_truth_diff, AgreementReport, WindowPairVerdict};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("request id {0} is not in the emission log")]
    UnknownRequestId(u64),
    #[error("emission log i/o: {0}")]
    Io(#[from] std::io::Error),
}
