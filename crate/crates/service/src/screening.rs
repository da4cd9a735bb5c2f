//! Generated artifacts and the human-screening queue.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use apcg_core::quality::FilterVerdict;
use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Settable clock for tests.
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(t: DateTime<Utc>) -> Self {
        Self(Mutex::new(t))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock() = t;
    }

    pub fn advance(&self, d: chrono::Duration) {
        *self.0.lock() += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Cache,
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreeningState {
    Pending,
    Approved,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateText {
    pub text: String,
    pub score: f64,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationArtifact {
    pub id: String,
    pub sku: String,
    pub text: String,
    pub candidates: Vec<CandidateText>,
    pub provenance: Provenance,
    pub model_version: String,
    pub verdict: FilterVerdict,
    pub state: ScreeningState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub latency_ms: f64,
}

impl GenerationArtifact {
    /// Text a reader sees: the reviewer's edit when there is one.
    pub fn final_text(&self) -> &str {
        self.edited_text.as_deref().unwrap_or(&self.text)
    }

    pub fn eligible(&self) -> bool {
        self.verdict.accepted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    pub artifact_id: String,
    pub sku: String,
    pub from: ScreeningState,
    pub to: ScreeningState,
    #[serde(default)]
    pub edited: bool,
}

/// Append-only transition log, mirrored to a JSON-lines file when given one.
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
    file: Option<Mutex<File>>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(Vec::new()),
            file: None,
        }
    }

    /// Loads existing entries; an unparseable trailing line is ignored.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let mut entries = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                match serde_json::from_str(&line?) {
                    Ok(e) => entries.push(e),
                    Err(_) => break,
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
        })
    }

    fn append(&self, entry: AuditEntry) -> Result<(), ServiceError> {
        if let Some(f) = &self.file {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let mut f = f.lock();
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.entries.lock().push(entry);
        Ok(())
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().clone()
    }

    /// approved / (approved + rejected) over transitions on `day`; `None`
    /// when nothing was reviewed that day.
    pub fn acceptance_rate(&self, day: NaiveDate) -> Option<f64> {
        let entries = self.entries.lock();
        let (mut approved, mut rejected) = (0usize, 0usize);
        for e in entries.iter().filter(|e| e.at.date_naive() == day) {
            match e.to {
                ScreeningState::Approved => approved += 1,
                ScreeningState::Rejected => rejected += 1,
                ScreeningState::Pending => {}
            }
        }
        let reviewed = approved + rejected;
        (reviewed > 0).then(|| approved as f64 / reviewed as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub artifact: GenerationArtifact,
    pub acceptance_rate_today: Option<f64>,
}

/// Artifacts plus the FIFO of those awaiting review. Transitions on one
/// artifact are serialized by its own lock.
pub struct ScreeningBoard {
    artifacts: Mutex<HashMap<String, Arc<Mutex<GenerationArtifact>>>>,
    queue: Mutex<Vec<String>>,
    audit: AuditLog,
    clock: Arc<dyn Clock>,
}

impl ScreeningBoard {
    pub fn new(audit: AuditLog, clock: Arc<dyn Clock>) -> Self {
        Self {
            artifacts: Mutex::new(HashMap::new()),
            queue: Mutex::new(Vec::new()),
            audit,
            clock,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn register(&self, artifact: GenerationArtifact) {
        self.artifacts
            .lock()
            .insert(artifact.id.clone(), Arc::new(Mutex::new(artifact)));
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<GenerationArtifact>>, ServiceError> {
        self.artifacts
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("artifact {id}")))
    }

    pub fn get(&self, id: &str) -> Result<GenerationArtifact, ServiceError> {
        Ok(self.slot(id)?.lock().clone())
    }

    /// 1-based queue position. Submitting an already queued artifact returns
    /// its current position.
    pub fn submit(&self, id: &str) -> Result<usize, ServiceError> {
        let slot = self.slot(id)?;
        let a = slot.lock();
        if a.state != ScreeningState::Pending {
            return Err(ServiceError::AlreadyReviewed(id.to_owned()));
        }
        if !a.eligible() {
            return Err(ServiceError::NotEligible(id.to_owned()));
        }
        let mut queue = self.queue.lock();
        if let Some(pos) = queue.iter().position(|q| q == id) {
            return Ok(pos + 1);
        }
        queue.push(id.to_owned());
        Ok(queue.len())
    }

    pub fn queue_position(&self, id: &str) -> Option<usize> {
        self.queue.lock().iter().position(|q| q == id).map(|p| p + 1)
    }

    /// Applies a verdict to a pending artifact. `persist` runs under the
    /// artifact's lock with the approved artifact before the transition is
    /// made visible; an error from it leaves the artifact pending.
    pub fn review(
        &self,
        id: &str,
        verdict: Verdict,
        edited_text: Option<String>,
        persist: impl FnOnce(&GenerationArtifact) -> Result<(), ServiceError>,
    ) -> Result<ReviewOutcome, ServiceError> {
        let slot = self.slot(id)?;
        let mut a = slot.lock();
        if a.state != ScreeningState::Pending {
            return Err(ServiceError::AlreadyReviewed(id.to_owned()));
        }
        if !a.eligible() {
            return Err(ServiceError::NotEligible(id.to_owned()));
        }
        let now = self.clock.now();
        let mut next = a.clone();
        next.state = match verdict {
            Verdict::Approve => ScreeningState::Approved,
            Verdict::Reject => ScreeningState::Rejected,
        };
        next.reviewed_at = Some(now);
        let edited = edited_text.filter(|t| !t.trim().is_empty() && *t != a.text);
        if verdict == Verdict::Approve {
            next.edited_text = edited.clone();
            persist(&next)?;
        }
        self.audit.append(AuditEntry {
            at: now,
            artifact_id: id.to_owned(),
            sku: a.sku.clone(),
            from: a.state,
            to: next.state,
            edited: verdict == Verdict::Approve && edited.is_some(),
        })?;
        *a = next;
        self.queue.lock().retain(|q| q != id);
        Ok(ReviewOutcome {
            artifact: a.clone(),
            acceptance_rate_today: self.acceptance_rate_today(),
        })
    }

    /// Queued artifacts in submission order.
    pub fn pending(&self, limit: usize) -> Vec<GenerationArtifact> {
        let ids: Vec<String> = self.queue.lock().iter().take(limit).cloned().collect();
        ids.iter().filter_map(|id| self.get(id).ok()).collect()
    }

    pub fn pending_len(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn acceptance_rate_today(&self) -> Option<f64> {
        self.audit.acceptance_rate(self.clock.now().date_naive())
    }
}
