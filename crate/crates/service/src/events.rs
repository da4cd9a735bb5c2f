//! Page-view / click / purchase log and the click-through and conversion
//! rates computed from it.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Pv,
    Click,
    Purchase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp: DateTime<Utc>,
    pub sku: String,
    pub event: EventKind,
    #[serde(default)]
    pub bucket: String,
    /// Source of the record; timestamps must not decrease per writer.
    #[serde(default)]
    pub writer: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub pv: u64,
    pub clicks: u64,
    pub purchases: u64,
}

impl EventCounts {
    fn add(&mut self, kind: EventKind) {
        match kind {
            EventKind::Pv => self.pv += 1,
            EventKind::Click => self.clicks += 1,
            EventKind::Purchase => self.purchases += 1,
        }
    }

    /// clicks / page views.
    pub fn ctr(&self) -> Result<f64, ServiceError> {
        if self.pv == 0 {
            return Err(ServiceError::CtrUndefined);
        }
        Ok(self.clicks as f64 / self.pv as f64)
    }

    /// purchases / clicks.
    pub fn cvr(&self) -> Result<f64, ServiceError> {
        if self.clicks == 0 {
            return Err(ServiceError::CvrUndefined);
        }
        Ok(self.purchases as f64 / self.clicks as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub counts: EventCounts,
    pub ctr: Option<f64>,
    pub cvr: Option<f64>,
}

impl From<EventCounts> for Rates {
    fn from(counts: EventCounts) -> Self {
        Self {
            counts,
            ctr: counts.ctr().ok(),
            cvr: counts.cvr().ok(),
        }
    }
}

struct Inner {
    records: Vec<EventRecord>,
    last: HashMap<String, DateTime<Utc>>,
}

pub struct EventLog {
    inner: Mutex<Inner>,
    file: Option<Mutex<File>>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                last: HashMap::new(),
            }),
            file: None,
        }
    }

    /// JSON-lines log; an unparseable trailing line is ignored.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let log = Self::in_memory();
        if path.exists() {
            let mut inner = log.inner.lock();
            for line in BufReader::new(File::open(path)?).lines() {
                let Ok(r) = serde_json::from_str::<EventRecord>(&line?) else {
                    break;
                };
                inner.last.insert(r.writer.clone(), r.timestamp);
                inner.records.push(r);
            }
        }
        Ok(Self {
            file: Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?)),
            ..log
        })
    }

    /// Appends a batch atomically: either every record is accepted or none.
    pub fn append(&self, records: Vec<EventRecord>) -> Result<usize, ServiceError> {
        let mut inner = self.inner.lock();
        let mut last = inner.last.clone();
        for r in &records {
            if let Some(prev) = last.get(&r.writer) {
                if r.timestamp < *prev {
                    return Err(ServiceError::NonMonotone(format!(
                        "writer {:?}: {} after {}",
                        r.writer, r.timestamp, prev
                    )));
                }
            }
            last.insert(r.writer.clone(), r.timestamp);
        }
        if let Some(f) = &self.file {
            let mut buf = String::new();
            for r in &records {
                buf.push_str(&serde_json::to_string(r)?);
                buf.push('\n');
            }
            let mut f = f.lock();
            f.write_all(buf.as_bytes())?;
            f.sync_data()?;
        }
        let n = records.len();
        inner.last = last;
        inner.records.extend(records);
        Ok(n)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Counts over all records, or those of one bucket.
    pub fn counts(&self, bucket: Option<&str>) -> EventCounts {
        let mut c = EventCounts::default();
        for r in self.inner.lock().records.iter().filter(|r| bucket.is_none_or(|b| r.bucket == b)) {
            c.add(r.event);
        }
        c
    }

    pub fn ctr_cvr(&self, bucket: Option<&str>) -> Result<(f64, f64), ServiceError> {
        let c = self.counts(bucket);
        Ok((c.ctr()?, c.cvr()?))
    }

    pub fn by_bucket(&self) -> BTreeMap<String, Rates> {
        let mut per: BTreeMap<String, EventCounts> = BTreeMap::new();
        for r in &self.inner.lock().records {
            per.entry(r.bucket.clone()).or_default().add(r.event);
        }
        per.into_iter().map(|(k, v)| (k, v.into())).collect()
    }
}
