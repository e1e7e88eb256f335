//! Persistent cache of [`CommitRecord`]s so repositories shared by several
//! advisories are mined once.
//!
//! Layout: `store/<repo_fingerprint>/log.bin`, an append-only log of
//! `[u32 payload len][u32 crc32][json payload]` entries. An in-memory index
//! is rebuilt on open; a truncated tail or checksum mismatch makes the entry
//! invisible instead of wrong.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::repominer::{CommitRecord, Repo};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error("record id {record} does not match key {key}")]
    IdMismatch { key: String, record: String },
    #[error("cannot encode record: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Identifies one commit of one repository across runs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub repo_fingerprint: String,
    pub commit_id: String,
}

impl CacheKey {
    pub fn new(repo_fingerprint: impl Into<String>, commit_id: impl Into<String>) -> Self {
        Self {
            repo_fingerprint: repo_fingerprint.into(),
            commit_id: commit_id.into(),
        }
    }
}

/// Stable fingerprint for a clone: SHA-256 of its canonical source (origin
/// URL when configured, absolute path otherwise).
pub fn repo_fingerprint(repo: &Repo) -> String {
    fingerprint_source(&repo.canonical_source())
}

pub fn fingerprint_source(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

struct LogState {
    file: File,
    index: BTreeMap<String, (u64, u32)>,
}

/// One repository's commit-record log. Exactly one writer per instance;
/// reads and appends are serialized internally.
pub struct Store {
    root: PathBuf,
    logs: Mutex<BTreeMap<String, LogState>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    commit_id: String,
    record: CommitRecord,
}

impl Store {
    /// Opens (or creates) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            logs: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log_path(&self, fingerprint: &str) -> PathBuf {
        self.root.join(fingerprint).join("log.bin")
    }

    fn with_log<T>(
        &self,
        fingerprint: &str,
        f: impl FnOnce(&mut LogState) -> Result<T, StoreError>,
    ) -> Result<T, StoreError> {
        let mut logs = self.logs.lock().expect("store lock");
        if !logs.contains_key(fingerprint) {
            let path = self.log_path(fingerprint);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = OpenOptions::new()
                .read(true)
                .append(true)
                .create(true)
                .open(&path)?;
            let index = rebuild_index(&mut file, &path)?;
            logs.insert(fingerprint.to_string(), LogState { file, index });
        }
        f(logs.get_mut(fingerprint).expect("just inserted"))
    }

    /// Appends a record. Overwrites are allowed and idempotent: the latest
    /// append wins.
    pub fn put(&self, key: &CacheKey, record: &CommitRecord) -> Result<(), StoreError> {
        if record.id != key.commit_id {
            return Err(StoreError::IdMismatch {
                key: key.commit_id.clone(),
                record: record.id.clone(),
            });
        }
        let payload = serde_json::to_vec(&Entry {
            commit_id: key.commit_id.clone(),
            record: record.clone(),
        })?;
        let crc = crc32fast::hash(&payload);
        self.with_log(&key.repo_fingerprint, |log| {
            let offset = log.file.seek(SeekFrom::End(0))?;
            log.file.write_all(&(payload.len() as u32).to_le_bytes())?;
            log.file.write_all(&crc.to_le_bytes())?;
            log.file.write_all(&payload)?;
            log.file.flush()?;
            log.index.insert(key.commit_id.clone(), (offset, payload.len() as u32));
            Ok(())
        })
    }

    /// Fetches a record; absent for unknown keys and for entries that fail
    /// their checksum.
    pub fn get(&self, key: &CacheKey) -> Result<Option<CommitRecord>, StoreError> {
        self.with_log(&key.repo_fingerprint, |log| {
            let Some(&(offset, len)) = log.index.get(&key.commit_id) else {
                return Ok(None);
            };
            match read_entry(&mut log.file, offset, len) {
                Ok(entry) => Ok(Some(entry.record)),
                Err(reason) => {
                    log::warn!(
                        "corrupt cache entry for {} at offset {offset}: {reason}",
                        key.commit_id
                    );
                    log.index.remove(&key.commit_id);
                    Ok(None)
                }
            }
        })
    }

    pub fn contains(&self, key: &CacheKey) -> Result<bool, StoreError> {
        Ok(self.get(key)?.is_some())
    }

    /// Number of indexed records for a repository.
    pub fn len(&self, fingerprint: &str) -> Result<usize, StoreError> {
        self.with_log(fingerprint, |log| Ok(log.index.len()))
    }

    pub fn is_empty(&self, fingerprint: &str) -> Result<bool, StoreError> {
        Ok(self.len(fingerprint)? == 0)
    }
}

fn read_entry(file: &mut File, offset: u64, len: u32) -> Result<Entry, String> {
    file.seek(SeekFrom::Start(offset)).map_err(|e| e.to_string())?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header).map_err(|e| e.to_string())?;
    let stored_len = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let stored_crc = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if stored_len != len {
        return Err(format!("length mismatch: index {len}, log {stored_len}"));
    }
    let mut payload = vec![0u8; len as usize];
    file.read_exact(&mut payload).map_err(|e| e.to_string())?;
    if crc32fast::hash(&payload) != stored_crc {
        return Err("checksum mismatch".to_string());
    }
    serde_json::from_slice(&payload).map_err(|e| e.to_string())
}

/// Scans the log sequentially, keeping the last valid entry per commit id.
/// Stops at the first truncated or corrupt record; everything before it
/// stays visible.
fn rebuild_index(file: &mut File, path: &Path) -> Result<BTreeMap<String, (u64, u32)>, StoreError> {
    let mut index = BTreeMap::new();
    let end = file.seek(SeekFrom::End(0))?;
    let mut offset = 0u64;
    file.seek(SeekFrom::Start(0))?;
    while offset + 8 <= end {
        let mut header = [0u8; 8];
        file.read_exact(&mut header)?;
        let len = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let crc = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if offset + 8 + len as u64 > end {
            log::warn!("truncated cache entry at {}:{offset}; ignoring tail", path.display());
            break;
        }
        let mut payload = vec![0u8; len as usize];
        file.read_exact(&mut payload)?;
        if crc32fast::hash(&payload) != crc {
            log::warn!("corrupt cache entry at {}:{offset}; ignoring tail", path.display());
            break;
        }
        match serde_json::from_slice::<Entry>(&payload) {
            Ok(entry) => {
                index.insert(entry.commit_id, (offset, len));
            }
            Err(e) => {
                log::warn!("undecodable cache entry at {}:{offset}: {e}; skipping", path.display());
            }
        }
        offset += 8 + len as u64;
    }
    file.seek(SeekFrom::End(0))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::TokenList;
    use chrono::TimeZone;
    use chrono::Utc;
    use proptest::prelude::*;

    fn record(id: &str, message: &str) -> CommitRecord {
        CommitRecord {
            id: id.to_string(),
            timestamp: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            message: message.to_string(),
            changed_files: vec!["a.py".into()],
            diff_lines: vec!["+x".into()],
            n_hunks: 1,
            avg_hunk_size: 3.0,
            pre_message: TokenList(vec!["msg".into()]),
            pre_files: TokenList(vec!["py".into()]),
            pre_diff: TokenList(vec![]),
        }
    }

    fn key(id: &str) -> CacheKey {
        CacheKey::new("repo0", id)
    }

    #[test]
    fn put_get_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let id = "a".repeat(40);
        let rec = record(&id, "hello ünïcode");
        store.put(&key(&id), &rec).unwrap();
        assert_eq!(store.get(&key(&id)).unwrap(), Some(rec));
    }

    #[test]
    fn put_twice_single_logical_entry() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let id = "b".repeat(40);
        store.put(&key(&id), &record(&id, "one")).unwrap();
        store.put(&key(&id), &record(&id, "two")).unwrap();
        assert_eq!(store.len("repo0").unwrap(), 1);
        assert_eq!(store.get(&key(&id)).unwrap().unwrap().message, "two");
    }

    #[test]
    fn put_mismatched_id_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let err = store.put(&key(&"c".repeat(40)), &record(&"d".repeat(40), "x"));
        assert!(matches!(err, Err(StoreError::IdMismatch { .. })));
    }

    #[test]
    fn unknown_key_absent() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        assert_eq!(store.get(&key(&"e".repeat(40))).unwrap(), None);
        assert!(!store.contains(&key(&"e".repeat(40))).unwrap());
    }

    #[test]
    fn survives_reopen() {
        let tmp = tempfile::tempdir().unwrap();
        let id = "f".repeat(40);
        {
            let store = Store::open(tmp.path()).unwrap();
            store.put(&key(&id), &record(&id, "persisted")).unwrap();
        }
        let store = Store::open(tmp.path()).unwrap();
        assert_eq!(store.get(&key(&id)).unwrap().unwrap().message, "persisted");
    }

    #[test]
    fn truncated_tail_surfaces_as_absent() {
        let tmp = tempfile::tempdir().unwrap();
        let id1 = "1".repeat(40);
        let id2 = "2".repeat(40);
        {
            let store = Store::open(tmp.path()).unwrap();
            store.put(&key(&id1), &record(&id1, "first")).unwrap();
            store.put(&key(&id2), &record(&id2, "second")).unwrap();
        }
        let log = tmp.path().join("repo0").join("log.bin");
        let bytes = std::fs::read(&log).unwrap();
        std::fs::write(&log, &bytes[..bytes.len() - 7]).unwrap();

        let store = Store::open(tmp.path()).unwrap();
        assert!(store.get(&key(&id1)).unwrap().is_some());
        assert_eq!(store.get(&key(&id2)).unwrap(), None);
    }

    #[test]
    fn flipped_byte_surfaces_as_absent_never_wrong() {
        let tmp = tempfile::tempdir().unwrap();
        let id = "3".repeat(40);
        {
            let store = Store::open(tmp.path()).unwrap();
            store.put(&key(&id), &record(&id, "payload")).unwrap();
        }
        let log = tmp.path().join("repo0").join("log.bin");
        let mut bytes = std::fs::read(&log).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&log, &bytes).unwrap();

        let store = Store::open(tmp.path()).unwrap();
        assert_eq!(store.get(&key(&id)).unwrap(), None);
    }

    #[test]
    fn fingerprint_stable_for_path() {
        let tmp = tempfile::tempdir().unwrap();
        let _ = crate::synth::RepoBuilder::init(tmp.path());
        let repo = Repo::open(tmp.path()).unwrap();
        assert_eq!(repo_fingerprint(&repo), repo_fingerprint(&repo));
    }

    prop_compose! {
        fn arb_record()(
            id in "[0-9a-f]{40}",
            message in "\\PC{0,80}",
            files in proptest::collection::vec("[a-zA-Z0-9_/.]{1,24}", 0..6),
            diff in proptest::collection::vec("\\PC{0,60}", 0..30),
            n_hunks in 0u32..20,
            secs in 0i64..2_000_000_000,
        ) -> CommitRecord {
            CommitRecord {
                id,
                timestamp: chrono::DateTime::from_timestamp(secs, 0).unwrap(),
                message,
                changed_files: files,
                diff_lines: diff,
                n_hunks,
                avg_hunk_size: if n_hunks == 0 { 0.0 } else { 2.5 },
                pre_message: TokenList(vec!["word".into()]),
                pre_files: TokenList(vec![]),
                pre_diff: TokenList(vec!["tok".into(), "en".into()]),
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn roundtrip_equality(rec in arb_record()) {
            let tmp = tempfile::tempdir().unwrap();
            let store = Store::open(tmp.path()).unwrap();
            let k = CacheKey::new("fp", &rec.id);
            store.put(&k, &rec).unwrap();
            prop_assert_eq!(store.get(&k).unwrap(), Some(rec));
        }
    }
}
