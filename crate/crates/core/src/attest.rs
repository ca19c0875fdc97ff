//! Signed responses bound to a committed configuration.
//!
//! There is no hardware here. A root key stands in for the hardware root of
//! trust, and the [`Keyholder`] stands in for the enclave: it holds the
//! signing key and offers nothing but a `sign_response` capability. Whoever
//! runs the keyholder is trusted to have set it up honestly; the scheme only
//! shows that a response was signed by a key that the root bound to a
//! particular manifest digest.
//!
//! Wire formats are canonical JSON (keys sorted, no whitespace). Digests are
//! lowercase hex; keys and signatures are lowercase hex of their raw bytes.
//!
//! ```text
//! report:   {"binding_signature":<64 B>,"manifest_digest":<32 B>,"scheme":"ed25519","signing_pubkey":<32 B>}
//! response: {"manifest_digest":<32 B>,"response_digest":<32 B>,"signature":<64 B>}
//! ```
//!
//! The binding signature covers `manifest_digest ‖ signing_pubkey` (64 raw
//! bytes), the response signature covers `response_digest ‖ manifest_digest`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::{canonical_json, Digest256};
use crate::model::{ConfigurationObservation, Resolution};
use crate::time::Timestamp;

pub const SIGNATURE_SCHEME: &str = "ed25519";

/// Prefix of the pseudo-fingerprint carried by verified responses.
pub const ATTESTED_PREFIX: &str = "attest:sha256:";

#[derive(Debug, thiserror::Error)]
pub enum AttestError {
    #[error("no root key available to the keyholder")]
    MissingRootKey,
    #[error("keyholder is closed")]
    KeyholderClosed,
    #[error("malformed key material: {0}")]
    BadKey(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq)]
        pub struct $name(pub [u8; $len]);

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &hex::encode(self.0)[..12])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                if s.bytes().any(|b| b.is_ascii_uppercase()) {
                    return Err(serde::de::Error::custom("hex must be lowercase"));
                }
                let mut out = [0u8; $len];
                hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
                Ok($name(out))
            }
        }
    };
}

hex_bytes!(PublicKeyBytes, 32);
hex_bytes!(SignatureBytes, 64);

/// What the keyholder commits to at start-up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigurationManifest {
    pub weights_digest: Digest256,
    pub system_prompt_digest: Digest256,
    pub serving_code_digest: Digest256,
    pub inference_params: BTreeMap<String, String>,
    pub created_at: Timestamp,
}

impl ConfigurationManifest {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn digest(&self) -> Digest256 {
        Digest256::of(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationReport {
    pub scheme: String,
    pub manifest_digest: Digest256,
    pub signing_pubkey: PublicKeyBytes,
    pub binding_signature: SignatureBytes,
}

impl AttestationReport {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedResponse {
    pub response_digest: Digest256,
    pub manifest_digest: Digest256,
    pub signature: SignatureBytes,
}

impl SignedResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }
}

fn binding_message(manifest_digest: &Digest256, pubkey: &[u8; 32]) -> [u8; 64] {
    let mut m = [0u8; 64];
    m[..32].copy_from_slice(manifest_digest.as_bytes());
    m[32..].copy_from_slice(pubkey);
    m
}

fn response_message(response_digest: &Digest256, manifest_digest: &Digest256) -> [u8; 64] {
    let mut m = [0u8; 64];
    m[..32].copy_from_slice(response_digest.as_bytes());
    m[32..].copy_from_slice(manifest_digest.as_bytes());
    m
}

fn fresh_key<R: RngCore + ?Sized>(rng: &mut R) -> SigningKey {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    SigningKey::from_bytes(&seed)
}

/// The stand-in for the hardware root of trust.
pub struct RootKey(SigningKey);

impl RootKey {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        RootKey(fresh_key(rng))
    }

    /// From the thread-local OS-seeded generator.
    pub fn random() -> Self {
        Self::generate(&mut rand::rng())
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        RootKey(SigningKey::from_bytes(&seed))
    }

    pub fn public(&self) -> PublicKeyBytes {
        PublicKeyBytes(self.0.verifying_key().to_bytes())
    }

    /// Reads a 64-character hex seed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AttestError> {
        let text = std::fs::read_to_string(path)?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut seed).map_err(|e| AttestError::BadKey(e.to_string()))?;
        Ok(RootKey::from_seed(seed))
    }

    pub fn seed_hex(&self) -> String {
        hex::encode(self.0.to_bytes())
    }
}

impl fmt::Debug for RootKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RootKey(pub {})", self.public())
    }
}

/// The simulated enclave: owns the root key and hands out keyholders.
pub struct Enclave {
    root: Option<RootKey>,
}

impl Enclave {
    pub fn new(root: RootKey) -> Self {
        Enclave { root: Some(root) }
    }

    /// An enclave that was never provisioned; every commit fails.
    pub fn unprovisioned() -> Self {
        Enclave { root: None }
    }

    pub fn root_public(&self) -> Option<PublicKeyBytes> {
        self.root.as_ref().map(RootKey::public)
    }

    pub fn commit(&self, manifest: ConfigurationManifest) -> Result<(ConfigurationManifest, AttestationReport, Keyholder), AttestError> {
        self.commit_with_rng(manifest, &mut rand::rng())
    }

    /// Generates a fresh signing key and has the root bind it to the
    /// manifest digest.
    pub fn commit_with_rng<R: RngCore + ?Sized>(
        &self,
        manifest: ConfigurationManifest,
        rng: &mut R,
    ) -> Result<(ConfigurationManifest, AttestationReport, Keyholder), AttestError> {
        let root = self.root.as_ref().ok_or(AttestError::MissingRootKey)?;
        let signing = fresh_key(rng);
        let manifest_digest = manifest.digest();
        let pubkey = signing.verifying_key().to_bytes();
        let binding = root.0.sign(&binding_message(&manifest_digest, &pubkey));
        let report = AttestationReport {
            scheme: SIGNATURE_SCHEME.to_string(),
            manifest_digest,
            signing_pubkey: PublicKeyBytes(pubkey),
            binding_signature: SignatureBytes(binding.to_bytes()),
        };
        let holder = Keyholder {
            key: Mutex::new(Some(signing)),
            manifest_digest,
        };
        Ok((manifest, report, holder))
    }
}

/// Signing capability for one committed manifest. Requests are serialized
/// through the inner lock; the private key is never exposed.
pub struct Keyholder {
    key: Mutex<Option<SigningKey>>,
    manifest_digest: Digest256,
}

impl Keyholder {
    pub fn manifest_digest(&self) -> Digest256 {
        self.manifest_digest
    }

    pub fn sign_response(&self, response: &[u8]) -> Result<SignedResponse, AttestError> {
        let guard = self.key.lock().unwrap_or_else(|e| e.into_inner());
        let key = guard.as_ref().ok_or(AttestError::KeyholderClosed)?;
        let response_digest = Digest256::of(response);
        let sig = key.sign(&response_message(&response_digest, &self.manifest_digest));
        Ok(SignedResponse {
            response_digest,
            manifest_digest: self.manifest_digest,
            signature: SignatureBytes(sig.to_bytes()),
        })
    }

    /// Destroys the signing key.
    pub fn close(&self) {
        self.key.lock().unwrap_or_else(|e| e.into_inner()).take();
    }

    pub fn is_closed(&self) -> bool {
        self.key.lock().unwrap_or_else(|e| e.into_inner()).is_none()
    }
}

impl fmt::Debug for Keyholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keyholder")
            .field("manifest_digest", &self.manifest_digest)
            .field("closed", &self.is_closed())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadRootBinding,
    BadResponseSignature,
    ManifestMismatch,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BadRootBinding => "bad_root_binding",
            RejectReason::BadResponseSignature => "bad_response_signature",
            RejectReason::ManifestMismatch => "manifest_mismatch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Verification {
    Verified { manifest_digest: Digest256 },
    Rejected { reason: RejectReason },
}

impl Verification {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verification::Verified { .. })
    }
}

/// Checks root → signing key → (response, manifest). Only digests and
/// signatures are read.
pub fn verify(signed: &SignedResponse, report: &AttestationReport, root_pubkey: &PublicKeyBytes) -> Verification {
    let reject = |reason| Verification::Rejected { reason };
    if report.scheme != SIGNATURE_SCHEME {
        return reject(RejectReason::BadRootBinding);
    }
    let Ok(root) = VerifyingKey::from_bytes(&root_pubkey.0) else {
        return reject(RejectReason::BadRootBinding);
    };
    let binding = Signature::from_bytes(&report.binding_signature.0);
    let msg = binding_message(&report.manifest_digest, &report.signing_pubkey.0);
    if root.verify_strict(&msg, &binding).is_err() {
        return reject(RejectReason::BadRootBinding);
    }
    let Ok(signing) = VerifyingKey::from_bytes(&report.signing_pubkey.0) else {
        return reject(RejectReason::BadRootBinding);
    };
    if signed.manifest_digest != report.manifest_digest {
        return reject(RejectReason::ManifestMismatch);
    }
    let sig = Signature::from_bytes(&signed.signature.0);
    let msg = response_message(&signed.response_digest, &signed.manifest_digest);
    if signing.verify_strict(&msg, &sig).is_err() {
        return reject(RejectReason::BadResponseSignature);
    }
    Verification::Verified {
        manifest_digest: report.manifest_digest,
    }
}

/// [`verify`], plus a check that `response` hashes to the signed digest.
pub fn verify_with_body(
    response: &[u8],
    signed: &SignedResponse,
    report: &AttestationReport,
    root_pubkey: &PublicKeyBytes,
) -> Verification {
    match verify(signed, report, root_pubkey) {
        Verification::Verified { .. } if Digest256::of(response) != signed.response_digest => Verification::Rejected {
            reason: RejectReason::BadResponseSignature,
        },
        v => v,
    }
}

/// The fingerprint token an attested response contributes to stability
/// evaluation.
pub fn attested_fingerprint(manifest_digest: &Digest256) -> String {
    format!("{ATTESTED_PREFIX}{manifest_digest}")
}

/// Verified responses resolve to their manifest; anything else is ⊥.
pub fn observe_attested(
    response: &[u8],
    signed: &SignedResponse,
    report: &AttestationReport,
    root_pubkey: &PublicKeyBytes,
) -> Resolution {
    match verify_with_body(response, signed, report, root_pubkey) {
        Verification::Verified { manifest_digest } => Resolution::Resolved(ConfigurationObservation::new(
            Some(attested_fingerprint(&manifest_digest)),
            signed.response_digest,
        )),
        Verification::Rejected { .. } => Resolution::Unresolvable,
    }
}
