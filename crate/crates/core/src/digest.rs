//! 256-bit digests and the canonical JSON encoding every hashed structure uses.
//!
//! Canonical form is serde_json's compact output of a `Value`, whose object
//! maps are key-sorted. Nothing in this crate enables `preserve_order`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// Name of the hash function written into ledger headers and reports.
pub const HASH_ALGORITHM: &str = "sha256";

/// A SHA-256 output, serialized as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest256(Sha256::digest(bytes).into())
    }

    /// Hash of the concatenation of `parts`.
    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        Digest256(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", &self.to_hex()[..16])
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid digest: {0}")]
pub struct ParseDigestError(String);

impl FromStr for Digest256 {
    type Err = ParseDigestError;

    /// Only the lowercase form is accepted so that every digest has exactly
    /// one textual encoding.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(ParseDigestError(format!("expected 64 lowercase hex chars, got {s:?}")));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| ParseDigestError(e.to_string()))?;
        Ok(Digest256(out))
    }
}

impl Serialize for Digest256 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Key-sorted, whitespace-free JSON bytes for `value`.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("in-memory values always serialize");
    serde_json::to_vec(&value).expect("json values always serialize")
}

/// Digest of the canonical form of `value` with the top-level key `omit`
/// removed. Used for self-describing records that carry their own digest.
pub fn digest_without<T: Serialize + ?Sized>(value: &T, omit: &str) -> Digest256 {
    let mut value = serde_json::to_value(value).expect("in-memory values always serialize");
    if let Some(map) = value.as_object_mut() {
        map.remove(omit);
    }
    Digest256::of(&serde_json::to_vec(&value).expect("json values always serialize"))
}
