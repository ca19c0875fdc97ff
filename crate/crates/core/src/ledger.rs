//! Append-only, hash-chained ledger of observations, claims and verdicts.
//!
//! # File format
//!
//! A ledger is one UTF-8 file of `\n`-terminated lines. Every line is the
//! canonical JSON encoding (object keys sorted, no insignificant whitespace)
//! of one object; any other encoding of the same value is corruption.
//!
//! Line 1 is the header:
//!
//! ```text
//! {"format":"refcheck-ledger","hash":"sha256","version":1}
//! ```
//!
//! Each following line is an entry:
//!
//! ```text
//! {"entry_digest":"<hex>","index":0,"prev_digest":"<hex>","record":{"type":"observation",...}}
//! ```
//!
//! * `index` counts entries from 0.
//! * `prev_digest` is 64 zeros for entry 0 and the previous `entry_digest`
//!   otherwise.
//! * `record.record_digest` is SHA-256 of the record's canonical JSON with the
//!   `record_digest` key removed (the `type` tag included).
//! * `entry_digest` is SHA-256 of the 32 raw bytes of `record_digest`
//!   followed by the 32 raw bytes of `prev_digest`.
//!
//! Any third party can re-verify a ledger with a JSON parser and SHA-256.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::claims::Claim;
use crate::digest::{canonical_json, digest_without, Digest256, HASH_ALGORITHM};
use crate::model::ContextWindow;
use crate::probe::{ObservationRecord, RecordSink, SinkError};
use crate::time::Timestamp;

pub const FORMAT_NAME: &str = "refcheck-ledger";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger i/o: {0}")]
    Io(#[from] io::Error),
    #[error("ledger integrity failure at entry {index}: {reason}")]
    Integrity { index: u64, reason: String },
    #[error("ledger header invalid: {0}")]
    BadHeader(String),
    #[error("ledger {0} already exists")]
    AlreadyExists(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerHeader {
    pub format: String,
    pub hash: String,
    pub version: u32,
}

impl Default for LedgerHeader {
    fn default() -> Self {
        LedgerHeader {
            format: FORMAT_NAME.into(),
            hash: HASH_ALGORITHM.into(),
            version: FORMAT_VERSION,
        }
    }
}

/// A verdict printed by a tool, kept so sessions are auditable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub kind: String,
    pub subject: String,
    pub verdict: String,
    pub detail: serde_json::Value,
    pub recorded_at: Timestamp,
    pub record_digest: Digest256,
}

impl VerdictRecord {
    pub fn sealed(
        kind: impl Into<String>,
        subject: impl Into<String>,
        verdict: impl Into<String>,
        detail: serde_json::Value,
        recorded_at: Timestamp,
    ) -> Self {
        let mut v = VerdictRecord {
            kind: kind.into(),
            subject: subject.into(),
            verdict: verdict.into(),
            detail,
            recorded_at,
            record_digest: Digest256::ZERO,
        };
        v.record_digest = LedgerRecord::Verdict(v.clone()).compute_digest();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LedgerRecord {
    Observation(ObservationRecord),
    Claim(Claim),
    Verdict(VerdictRecord),
}

impl LedgerRecord {
    pub fn record_digest(&self) -> Digest256 {
        match self {
            LedgerRecord::Observation(r) => r.record_digest,
            LedgerRecord::Claim(c) => c.record_digest,
            LedgerRecord::Verdict(v) => v.record_digest,
        }
    }

    /// Recomputes the digest from the tagged canonical form.
    pub fn compute_digest(&self) -> Digest256 {
        match self {
            // Observation digests are defined over the bare record so that
            // they can be checked outside a ledger.
            LedgerRecord::Observation(r) => r.compute_digest(),
            other => digest_without(other, "record_digest"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub index: u64,
    pub record: LedgerRecord,
    pub prev_digest: Digest256,
    pub entry_digest: Digest256,
}

pub fn entry_digest(record_digest: &Digest256, prev_digest: &Digest256) -> Digest256 {
    Digest256::of_parts(&[record_digest.as_bytes(), prev_digest.as_bytes()])
}

impl LedgerEntry {
    fn chain(index: u64, record: LedgerRecord, prev_digest: Digest256) -> Self {
        let entry_digest = entry_digest(&record.record_digest(), &prev_digest);
        LedgerEntry {
            index,
            record,
            prev_digest,
            entry_digest,
        }
    }

    /// Canonical line, newline included.
    pub fn to_line(&self) -> Vec<u8> {
        let mut line = canonical_json(self);
        line.push(b'\n');
        line
    }
}

/// Result of a full chain scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainStatus {
    Intact { entries: u64 },
    BadHeader(String),
    /// First entry that fails a check.
    Corrupt { index: u64, reason: String },
}

impl ChainStatus {
    pub fn is_intact(&self) -> bool {
        matches!(self, ChainStatus::Intact { .. })
    }
}

fn header_line() -> Vec<u8> {
    let mut line = canonical_json(&LedgerHeader::default());
    line.push(b'\n');
    line
}

/// Parses and checks ledger bytes. Returns every entry before the first
/// failure alongside the status.
pub fn scan(bytes: &[u8]) -> (Vec<LedgerEntry>, ChainStatus) {
    let mut entries = Vec::new();
    let mut lines = bytes.split_inclusive(|b| *b == b'\n');

    match lines.next() {
        None => return (entries, ChainStatus::BadHeader("empty file".into())),
        Some(line) => {
            if line != header_line().as_slice() {
                let reason = match serde_json::from_slice::<LedgerHeader>(line.strip_suffix(b"\n").unwrap_or(line)) {
                    Ok(h) if h.hash != HASH_ALGORITHM => format!("unsupported hash {:?}", h.hash),
                    Ok(h) if h.format != FORMAT_NAME || h.version != FORMAT_VERSION => {
                        format!("unsupported format {:?} v{}", h.format, h.version)
                    }
                    Ok(_) => "header is not in canonical form".into(),
                    Err(e) => e.to_string(),
                };
                return (entries, ChainStatus::BadHeader(reason));
            }
        }
    }

    let mut prev = Digest256::ZERO;
    for (i, line) in lines.enumerate() {
        let index = i as u64;
        match check_line(index, line, &prev) {
            Ok(entry) => {
                prev = entry.entry_digest;
                entries.push(entry);
            }
            Err(reason) => return (entries, ChainStatus::Corrupt { index, reason }),
        }
    }
    let n = entries.len() as u64;
    (entries, ChainStatus::Intact { entries: n })
}

fn check_line(index: u64, line: &[u8], prev: &Digest256) -> Result<LedgerEntry, String> {
    let body = line
        .strip_suffix(b"\n")
        .ok_or_else(|| "unterminated line".to_string())?;
    let entry: LedgerEntry = serde_json::from_slice(body).map_err(|e| format!("unparseable entry: {e}"))?;
    if entry.to_line() != line {
        return Err("entry is not in canonical form".into());
    }
    if entry.index != index {
        return Err(format!("index field {} out of sequence", entry.index));
    }
    if entry.prev_digest != *prev {
        return Err("prev_digest does not match the preceding entry".into());
    }
    let record_digest = entry.record.record_digest();
    if entry.record.compute_digest() != record_digest {
        return Err("record_digest does not match record contents".into());
    }
    if entry_digest(&record_digest, prev) != entry.entry_digest {
        return Err("entry_digest mismatch".into());
    }
    Ok(entry)
}

/// Verifies a ledger file without opening it for writing.
pub fn verify_file(path: &Path) -> Result<ChainStatus, LedgerError> {
    let bytes = std::fs::read(path)?;
    Ok(scan(&bytes).1)
}

/// A ledger handle. One writer per file; any number of read-only handles.
///
/// The handle caches the verified entries. A ledger found corrupt at open
/// stays readable only through [`Ledger::verify_chain`]; queries and appends
/// fail with [`LedgerError::Integrity`].
#[derive(Debug)]
pub struct Ledger {
    path: Option<PathBuf>,
    file: Option<File>,
    entries: Vec<LedgerEntry>,
    corruption: Option<(u64, String)>,
    len_bytes: u64,
}

impl Ledger {
    /// A ledger that lives only in memory.
    pub fn in_memory() -> Self {
        Ledger {
            path: None,
            file: None,
            entries: Vec::new(),
            corruption: None,
            len_bytes: header_line().len() as u64,
        }
    }

    pub fn create(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => LedgerError::AlreadyExists(path.to_path_buf()),
                _ => LedgerError::Io(e),
            })?;
        let header = header_line();
        file.write_all(&header)?;
        file.sync_data()?;
        Ok(Ledger {
            path: Some(path.to_path_buf()),
            file: Some(file),
            entries: Vec::new(),
            corruption: None,
            len_bytes: header.len() as u64,
        })
    }

    /// Opens an existing ledger for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        Self::open_inner(path.as_ref(), true)
    }

    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        Self::open_inner(path.as_ref(), false)
    }

    pub fn open_or_create(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        if path.exists() {
            Self::open(path)
        } else {
            Self::create(path)
        }
    }

    fn open_inner(path: &Path, writable: bool) -> Result<Self, LedgerError> {
        let bytes = std::fs::read(path)?;
        let (entries, status) = scan(&bytes);
        let corruption = match status {
            ChainStatus::Intact { .. } => None,
            ChainStatus::BadHeader(reason) => return Err(LedgerError::BadHeader(reason)),
            ChainStatus::Corrupt { index, reason } => Some((index, reason)),
        };
        let file = if writable {
            Some(OpenOptions::new().append(true).open(path)?)
        } else {
            None
        };
        Ok(Ledger {
            path: Some(path.to_path_buf()),
            file,
            entries,
            corruption,
            len_bytes: bytes.len() as u64,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_integrity(&self) -> Result<(), LedgerError> {
        match &self.corruption {
            Some((index, reason)) => Err(LedgerError::Integrity {
                index: *index,
                reason: reason.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn entries(&self) -> Result<&[LedgerEntry], LedgerError> {
        self.check_integrity()?;
        Ok(&self.entries)
    }

    /// Appends one record; it is on disk before this returns.
    pub fn append(&mut self, record: LedgerRecord) -> Result<LedgerEntry, LedgerError> {
        let mut out = self.append_all(std::iter::once(record))?;
        Ok(out.pop().expect("one record appended"))
    }

    /// Appends records with a single write and sync. Either all land or the
    /// ledger is left unchanged.
    pub fn append_all(
        &mut self,
        records: impl IntoIterator<Item = LedgerRecord>,
    ) -> Result<Vec<LedgerEntry>, LedgerError> {
        self.check_integrity()?;
        if self.path.is_some() && self.file.is_none() {
            return Err(LedgerError::Io(io::Error::new(
                io::ErrorKind::PermissionDenied,
                "ledger opened read-only",
            )));
        }
        let mut prev = self.entries.last().map_or(Digest256::ZERO, |e| e.entry_digest);
        let mut next_index = self.entries.len() as u64;
        let mut new_entries = Vec::new();
        let mut buf = Vec::new();
        for record in records {
            let entry = LedgerEntry::chain(next_index, record, prev);
            buf.extend_from_slice(&entry.to_line());
            prev = entry.entry_digest;
            next_index += 1;
            new_entries.push(entry);
        }
        if let Some(file) = self.file.as_mut() {
            let write = file.write_all(&buf).and_then(|_| file.sync_data());
            if let Err(e) = write {
                // Roll back a partial write so the chain stays well-formed.
                let _ = file.set_len(self.len_bytes);
                return Err(LedgerError::Io(e));
            }
        }
        self.len_bytes += buf.len() as u64;
        self.entries.extend(new_entries.iter().cloned());
        Ok(new_entries)
    }

    /// Observation records for `identifier_name` inside `window`, in ledger
    /// order.
    pub fn query(&self, identifier_name: &str, window: &ContextWindow) -> Result<Vec<&ObservationRecord>, LedgerError> {
        Ok(self
            .observations()?
            .filter(|r| r.identifier.name() == identifier_name && window.contains(&r.context))
            .collect())
    }

    /// Every observation in `window`, any identifier.
    pub fn query_window(&self, window: &ContextWindow) -> Result<Vec<&ObservationRecord>, LedgerError> {
        Ok(self.observations()?.filter(|r| window.contains(&r.context)).collect())
    }

    pub fn observations(&self) -> Result<impl Iterator<Item = &ObservationRecord>, LedgerError> {
        self.check_integrity()?;
        Ok(self.entries.iter().filter_map(|e| match &e.record {
            LedgerRecord::Observation(r) => Some(r),
            _ => None,
        }))
    }

    pub fn claims(&self) -> Result<impl Iterator<Item = &Claim>, LedgerError> {
        self.check_integrity()?;
        Ok(self.entries.iter().filter_map(|e| match &e.record {
            LedgerRecord::Claim(c) => Some(c),
            _ => None,
        }))
    }

    /// Entries holding observations that match the selection, for export.
    pub fn observation_entries<'a>(
        &'a self,
        identifier_name: &'a str,
        window: &'a ContextWindow,
    ) -> Result<impl Iterator<Item = &'a LedgerEntry> + 'a, LedgerError> {
        self.check_integrity()?;
        Ok(self.entries.iter().filter(move |e| match &e.record {
            LedgerRecord::Observation(r) => r.identifier.name() == identifier_name && window.contains(&r.context),
            _ => false,
        }))
    }

    /// Full re-scan of the backing file (or of the in-memory entries).
    pub fn verify_chain(&self) -> Result<ChainStatus, LedgerError> {
        match &self.path {
            Some(path) => verify_file(path),
            None => {
                let mut bytes = header_line();
                for e in &self.entries {
                    bytes.extend_from_slice(&e.to_line());
                }
                Ok(scan(&bytes).1)
            }
        }
    }

    /// Serialized ledger bytes exactly as stored.
    pub fn export_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        match &self.path {
            Some(path) => Ok(std::fs::read(path)?),
            None => {
                let mut bytes = header_line();
                for e in &self.entries {
                    bytes.extend_from_slice(&e.to_line());
                }
                Ok(bytes)
            }
        }
    }

    /// Writes verified ledger bytes to a new file, unchanged.
    pub fn import(bytes: &[u8], dest: impl AsRef<Path>) -> Result<Self, LedgerError> {
        match scan(bytes).1 {
            ChainStatus::Intact { .. } => {}
            ChainStatus::BadHeader(r) => return Err(LedgerError::BadHeader(r)),
            ChainStatus::Corrupt { index, reason } => return Err(LedgerError::Integrity { index, reason }),
        }
        let dest = dest.as_ref();
        let mut file = OpenOptions::new().create_new(true).write(true).open(dest).map_err(|e| {
            match e.kind() {
                io::ErrorKind::AlreadyExists => LedgerError::AlreadyExists(dest.to_path_buf()),
                _ => LedgerError::Io(e),
            }
        })?;
        file.write_all(bytes)?;
        file.sync_data()?;
        drop(file);
        Self::open(dest)
    }
}

impl RecordSink for Ledger {
    fn accept(&mut self, record: ObservationRecord) -> Result<(), SinkError> {
        self.append(LedgerRecord::Observation(record))?;
        Ok(())
    }
}

/// Sink that batches observations and appends them in one write on
/// [`BufferedLedgerSink::commit`].
pub struct BufferedLedgerSink<'a> {
    ledger: &'a mut Ledger,
    pending: Vec<ObservationRecord>,
}

impl<'a> BufferedLedgerSink<'a> {
    pub fn new(ledger: &'a mut Ledger) -> Self {
        BufferedLedgerSink {
            ledger,
            pending: Vec::new(),
        }
    }

    pub fn commit(self) -> Result<usize, LedgerError> {
        let n = self.pending.len();
        self.ledger
            .append_all(self.pending.into_iter().map(LedgerRecord::Observation))?;
        Ok(n)
    }
}

impl RecordSink for BufferedLedgerSink<'_> {
    fn accept(&mut self, record: ObservationRecord) -> Result<(), SinkError> {
        self.pending.push(record);
        Ok(())
    }
}
