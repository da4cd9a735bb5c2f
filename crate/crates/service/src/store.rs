//! Durable `(sku, model version) -> value` map backed by an append-only
//! journal. Each record is `u32 len | u32 crc32 | JSON payload`, little-endian.
//! A write is acknowledged only after the record is synced; on open, a torn or
//! corrupt tail is truncated away, leaving the last acknowledged state.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"APCGJNL1";
const RECORD_HEADER: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoreKey {
    pub sku: String,
    pub model_version: String,
}

impl StoreKey {
    pub fn new(sku: impl Into<String>, model_version: impl Into<String>) -> Self {
        Self {
            sku: sku.into(),
            model_version: model_version.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    key: StoreKey,
    value: T,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal {0}: not a description journal")]
    BadMagic(PathBuf),
    #[error("journal encode: {0}")]
    Encode(#[from] serde_json::Error),
}

/// What recovery found when opening a journal.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Recovery {
    pub records: usize,
    /// Bytes cut from a torn or corrupt tail.
    pub truncated_bytes: u64,
}

pub struct DescriptionStore<T> {
    path: PathBuf,
    writer: Mutex<File>,
    snapshot: RwLock<Arc<HashMap<StoreKey, T>>>,
    recovery: Recovery,
}

impl<T: Clone + Serialize + DeserializeOwned> DescriptionStore<T> {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut map = HashMap::new();
        let mut recovery = Recovery::default();
        let good_end = if bytes.len() < MAGIC.len() {
            // Empty, or the header itself was torn.
            file.set_len(0)?;
            file.seek(SeekFrom::Start(0))?;
            file.write_all(MAGIC)?;
            file.sync_all()?;
            recovery.truncated_bytes = bytes.len() as u64;
            MAGIC.len()
        } else {
            if &bytes[..MAGIC.len()] != MAGIC {
                return Err(StoreError::BadMagic(path.to_owned()));
            }
            let mut off = MAGIC.len();
            while let Some((entry, next)) = parse_record::<T>(&bytes, off) {
                map.insert(entry.key, entry.value);
                recovery.records += 1;
                off = next;
            }
            if off < bytes.len() {
                recovery.truncated_bytes = (bytes.len() - off) as u64;
                file.set_len(off as u64)?;
                file.sync_all()?;
            }
            off
        };
        file.seek(SeekFrom::Start(good_end as u64))?;
        Ok(Self {
            path: path.to_owned(),
            writer: Mutex::new(file),
            snapshot: RwLock::new(Arc::new(map)),
            recovery,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    /// Durably records `value` under `key`, replacing any earlier value.
    /// Returns once the record is synced and visible to readers.
    pub fn put(&self, key: StoreKey, value: T) -> Result<(), StoreError> {
        let entry = Entry { key, value };
        let payload = serde_json::to_vec(&entry)?;
        let mut record = Vec::with_capacity(RECORD_HEADER + payload.len());
        record.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        record.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        record.extend_from_slice(&payload);

        let mut file = self.writer.lock();
        let start = file.stream_position()?;
        if let Err(e) = file.write_all(&record).and_then(|_| file.sync_data()) {
            // Leave no partial record behind for the next writer.
            let _ = file.set_len(start);
            let _ = file.seek(SeekFrom::Start(start));
            return Err(e.into());
        }
        let mut next = HashMap::clone(&self.snapshot.read());
        next.insert(entry.key, entry.value);
        *self.snapshot.write() = Arc::new(next);
        Ok(())
    }

    /// Last committed snapshot; later writes do not affect it.
    pub fn snapshot(&self) -> Arc<HashMap<StoreKey, T>> {
        self.snapshot.read().clone()
    }

    pub fn get(&self, key: &StoreKey) -> Option<T> {
        self.snapshot().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_record<T: DeserializeOwned>(bytes: &[u8], off: usize) -> Option<(Entry<T>, usize)> {
    let header = bytes.get(off..off + RECORD_HEADER)?;
    let len = u32::from_le_bytes(header[..4].try_into().ok()?) as usize;
    let crc = u32::from_le_bytes(header[4..].try_into().ok()?);
    let start = off + RECORD_HEADER;
    let payload = bytes.get(start..start.checked_add(len)?)?;
    if crc32fast::hash(payload) != crc {
        return None;
    }
    let entry = serde_json::from_slice(payload).ok()?;
    Some((entry, start + len))
}
