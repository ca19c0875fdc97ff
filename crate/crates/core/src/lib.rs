//! Referential-stability checks for hosted model endpoints.
//!
//! Probes an endpoint repeatedly, keeps every observation in a hash-chained
//! ledger, and answers three questions from that evidence: does an
//! identifier resolve to one configuration over a context, is a registered
//! claim still bound to what it was made about, and did the configuration
//! behind an identifier change (openly or only on unpublished probes).

pub mod analysis;
pub mod attest;
pub mod claims;
pub mod digest;
pub mod drift;
pub mod fixtures;
pub mod ledger;
pub mod model;
pub mod probe;
pub mod sim;
pub mod time;

pub use digest::Digest256;
pub use ledger::{Ledger, LedgerRecord};
pub use model::{ContextWindow, FingerprintSet, Identifier, StabilityStatus};
pub use probe::{run_campaign, CampaignSpec, ObservationRecord};
pub use time::{Clock, SystemClock, Timestamp, VirtualClock};
