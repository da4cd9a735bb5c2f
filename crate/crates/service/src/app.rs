//! The generation service: cache lookup, model generation, filtering,
//! screening and analytics behind one shared handle.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use apcg_core::corpus::{detokenize, linearize_product, read_corpus, LinearizeConfig, ProductRecord, TokenId};
use apcg_core::decode::{generate, BeamConfig, CallCounters, Candidate, EncodedSource, Predictors};
use apcg_core::model::{load_checkpoint, train, Model, TrainConfig, TrainObjective, TrainPair};
use apcg_core::quality::{check_terms_numbers, grammar_filter, CategoryLexicon, Ensemble, TermLexicon, FALLBACK_CATEGORY};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::events::{EventLog, Rates};
use crate::screening::{
    AuditLog, CandidateText, Clock, GenerationArtifact, Provenance, ReviewOutcome, ScreeningBoard, ScreeningState,
    SystemClock, Verdict,
};
use crate::store::{DescriptionStore, StoreKey};

/// File layout under the data directory.
#[derive(Clone, Debug)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn at(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn raw_corpus(&self) -> PathBuf {
        self.at("corpus/raw.jsonl")
    }
    pub fn clean_corpus(&self) -> PathBuf {
        self.at("corpus/clean.jsonl")
    }
    pub fn clean_report(&self) -> PathBuf {
        self.at("corpus/clean_report.json")
    }
    pub fn vocab(&self) -> PathBuf {
        self.at("corpus/vocab.json")
    }
    pub fn documents(&self) -> PathBuf {
        self.at("corpus/documents.jsonl")
    }
    pub fn pretrained(&self) -> PathBuf {
        self.at("checkpoints/pretrained.apcg")
    }
    pub fn model(&self) -> PathBuf {
        self.at("checkpoints/model.apcg")
    }
    pub fn lexicon(&self) -> PathBuf {
        self.at("lexicon.json")
    }
    pub fn grammar(&self) -> PathBuf {
        self.at("grammar.json")
    }
    pub fn journal(&self) -> PathBuf {
        self.at("store/descriptions.journal")
    }
    pub fn audit(&self) -> PathBuf {
        self.at("store/audit.jsonl")
    }
    pub fn events(&self) -> PathBuf {
        self.at("store/events.jsonl")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub beam: BeamConfig,
    pub linearize: LinearizeConfig,
    /// Grammar margin below which a description is rejected.
    pub grammar_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            beam: BeamConfig {
                max_len: 64,
                ..BeamConfig::default()
            },
            linearize: LinearizeConfig::default(),
            grammar_threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sku: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<ProductRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

impl GenerateRequest {
    pub fn sku(sku: impl Into<String>) -> Self {
        Self {
            sku: Some(sku.into()),
            ..Default::default()
        }
    }

    pub fn record(record: ProductRecord) -> Self {
        Self {
            record: Some(record),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub requested: usize,
    /// Items newly generated by the model and placed in the screening queue.
    pub enqueued: usize,
    /// Items generated by the model but rejected by a filter.
    pub filter_rejected: usize,
    /// Items answered from the description store.
    pub cached: usize,
    pub errored: usize,
    /// `(sku, error code)` per failed item.
    pub errors: Vec<(String, String)>,
}

impl BatchSummary {
    /// Every requested item lands in exactly one outcome.
    pub fn reconciles(&self) -> bool {
        self.requested == self.enqueued + self.filter_rejected + self.cached + self.errored
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub acceptance_rate_today: Option<f64>,
    pub ctr: Option<f64>,
    pub cvr: Option<f64>,
    pub cache_hit_rate: Option<f64>,
    pub requests: u64,
    pub cache_hits: u64,
    pub encoder_calls: u64,
    pub decoder_calls: u64,
    pub pending: usize,
    pub model_version: Option<String>,
    pub buckets: BTreeMap<String, Rates>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: Option<String>,
}

/// Lexicon used when none is configured: number checks only, for every category.
pub fn default_lexicon() -> TermLexicon {
    let mut lex = TermLexicon::default();
    lex.categories.insert(FALLBACK_CATEGORY.into(), CategoryLexicon::default());
    lex
}

pub struct Service {
    config: ServiceConfig,
    catalog: RwLock<HashMap<String, ProductRecord>>,
    model: RwLock<Option<Arc<Model>>>,
    counters: CallCounters,
    requests: AtomicU64,
    cache_hits: AtomicU64,
    next_id: AtomicU64,
    id_prefix: u32,
    store: DescriptionStore<GenerationArtifact>,
    board: ScreeningBoard,
    events: EventLog,
    lexicon: TermLexicon,
    grammar: Option<Ensemble>,
}

pub struct ServiceParts {
    pub config: ServiceConfig,
    pub store: DescriptionStore<GenerationArtifact>,
    pub board: ScreeningBoard,
    pub events: EventLog,
    pub lexicon: TermLexicon,
    pub grammar: Option<Ensemble>,
}

impl Service {
    pub fn new(parts: ServiceParts) -> Self {
        Self {
            config: parts.config,
            catalog: RwLock::new(HashMap::new()),
            model: RwLock::new(None),
            counters: CallCounters::default(),
            requests: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            next_id: AtomicU64::new(1),
            id_prefix: rand::random(),
            store: parts.store,
            board: parts.board,
            events: parts.events,
            lexicon: parts.lexicon,
            grammar: parts.grammar,
        }
    }

    /// Service over a data directory. Missing corpus, model, lexicon or
    /// grammar files are tolerated; the store and logs are created.
    pub fn open(dir: &DataDir, config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir.root.join("store"))?;
        let lexicon = if dir.lexicon().exists() {
            TermLexicon::load(&dir.lexicon())?
        } else {
            default_lexicon()
        };
        let grammar = if dir.grammar().exists() {
            Some(serde_json::from_str(&std::fs::read_to_string(dir.grammar())?)?)
        } else {
            None
        };
        let service = Self::new(ServiceParts {
            config,
            store: DescriptionStore::open(&dir.journal())?,
            board: ScreeningBoard::new(AuditLog::open(&dir.audit())?, clock),
            events: EventLog::open(&dir.events())?,
            lexicon,
            grammar,
        });
        for path in [dir.raw_corpus(), dir.clean_corpus()] {
            if path.exists() {
                service.add_records(read_corpus(&path)?);
            }
        }
        if dir.model().exists() {
            service.swap_model(load_checkpoint(&dir.model())?);
        }
        Ok(service)
    }

    /// Journal-backed store with in-memory audit and event logs.
    pub fn with_journal(journal: &Path, config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        Ok(Self::new(ServiceParts {
            config,
            store: DescriptionStore::open(journal)?,
            board: ScreeningBoard::new(AuditLog::in_memory(), clock),
            events: EventLog::in_memory(),
            lexicon: default_lexicon(),
            grammar: None,
        }))
    }

    pub fn set_lexicon(&mut self, lexicon: TermLexicon) {
        self.lexicon = lexicon;
    }

    pub fn set_grammar(&mut self, grammar: Option<Ensemble>) {
        self.grammar = grammar;
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn add_records(&self, records: impl IntoIterator<Item = ProductRecord>) {
        let mut catalog = self.catalog.write();
        for r in records {
            catalog.insert(r.sku.clone(), r);
        }
    }

    pub fn record(&self, sku: &str) -> Option<ProductRecord> {
        self.catalog.read().get(sku).cloned()
    }

    pub fn skus(&self) -> Vec<String> {
        let mut s: Vec<String> = self.catalog.read().keys().cloned().collect();
        s.sort();
        s
    }

    /// Installs a model; requests already running keep the one they started with.
    pub fn swap_model(&self, model: Model) -> String {
        let version = model.version.clone();
        *self.model.write() = Some(Arc::new(model));
        version
    }

    pub fn current_model(&self) -> Option<Arc<Model>> {
        self.model.read().clone()
    }

    fn require_model(&self) -> Result<Arc<Model>, ServiceError> {
        self.current_model().ok_or(ServiceError::ModelUnavailable)
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    /// Encoder plus decoder predictor calls so far.
    pub fn model_invocations(&self) -> u64 {
        self.counters.encoder_calls() + self.counters.decoder_calls()
    }

    pub fn board(&self) -> &ScreeningBoard {
        &self.board
    }

    pub fn store(&self) -> &DescriptionStore<GenerationArtifact> {
        &self.store
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    fn new_id(&self) -> String {
        format!("{:08x}-{:06}", self.id_prefix, self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn resolve(&self, req: &GenerateRequest) -> Result<ProductRecord, ServiceError> {
        match (&req.record, &req.sku) {
            (Some(r), _) => {
                r.validate()?;
                if r.sku.trim().is_empty() {
                    return Err(ServiceError::InvalidRequest("inline record needs a sku".into()));
                }
                self.add_records([r.clone()]);
                Ok(r.clone())
            }
            (None, Some(sku)) => self.record(sku).ok_or_else(|| ServiceError::UnknownProduct(sku.clone())),
            (None, None) => Err(ServiceError::InvalidRequest("request needs a sku or a record".into())),
        }
    }

    /// Cache hit: the stored approved artifact, untouched model. Miss: beam
    /// search, filters, and (when the filters pass) the screening queue.
    pub fn generate(&self, req: &GenerateRequest) -> Result<GenerationArtifact, ServiceError> {
        let start = Instant::now();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let record = self.resolve(req)?;
        let model = self.require_model()?;

        if let Some(mut hit) = self.store.get(&StoreKey::new(&record.sku, &model.version)) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            hit.provenance = Provenance::Cache;
            hit.latency_ms = start.elapsed().as_secs_f64() * 1000.0;
            return Ok(hit);
        }

        let beam = BeamConfig {
            beam_size: req.beam_size.unwrap_or(self.config.beam.beam_size),
            max_len: req.max_len.unwrap_or(self.config.beam.max_len),
            ..self.config.beam.clone()
        };
        let source = linearize_product(&record, &self.config.linearize)?;
        let predictors = Predictors {
            model: &model,
            counters: &self.counters,
        };
        let hyps = generate(&predictors, &source, &beam)?;
        let mode = self.config.linearize.mode;
        let candidates: Vec<CandidateText> = hyps
            .iter()
            .map(|h| CandidateText {
                text: detokenize(&h.tokens, mode),
                score: h.score,
                logprob: h.logprob,
            })
            .collect();
        let text = candidates.first().map(|c| c.text.clone()).unwrap_or_default();

        let mut verdict = check_terms_numbers(&text, &record, &self.lexicon);
        if let Some(g) = &self.grammar {
            verdict = verdict.merge(grammar_filter(&text, g, self.config.grammar_threshold, None));
        }
        let artifact = GenerationArtifact {
            id: self.new_id(),
            sku: record.sku.clone(),
            text,
            candidates,
            provenance: Provenance::Model,
            model_version: model.version.clone(),
            verdict,
            state: ScreeningState::Pending,
            edited_text: None,
            created_at: self.board.clock().now(),
            reviewed_at: None,
            latency_ms: start.elapsed().as_secs_f64() * 1000.0,
        };
        let eligible = artifact.eligible();
        let id = artifact.id.clone();
        self.board.register(artifact.clone());
        if eligible {
            self.board.submit(&id)?;
        }
        Ok(artifact)
    }

    pub fn submit(&self, id: &str) -> Result<usize, ServiceError> {
        self.board.submit(id)
    }

    /// Verdict on a pending artifact; approval writes the (possibly edited)
    /// artifact to the description store before the transition is visible.
    pub fn review(&self, id: &str, verdict: Verdict, edited_text: Option<String>) -> Result<ReviewOutcome, ServiceError> {
        self.board.review(id, verdict, edited_text, |approved| {
            self.store
                .put(StoreKey::new(&approved.sku, &approved.model_version), approved.clone())
                .map_err(ServiceError::from)
        })
    }

    /// Approved artifact for the current model, or the most recently
    /// reviewed one of any version when no model is loaded.
    pub fn description(&self, sku: &str) -> Option<GenerationArtifact> {
        match self.current_model() {
            Some(m) => self.store.get(&StoreKey::new(sku, &m.version)),
            None => self
                .store
                .snapshot()
                .iter()
                .filter(|(k, _)| k.sku == sku)
                .map(|(_, a)| a.clone())
                .max_by_key(|a| a.reviewed_at),
        }
    }

    pub fn pending(&self, limit: usize) -> Vec<GenerationArtifact> {
        self.board.pending(limit)
    }

    /// Generate, filter and enqueue per sku; item failures are tallied, not fatal.
    pub fn batch_generate(&self, skus: &[String], beam_size: Option<usize>) -> Result<BatchSummary, ServiceError> {
        if skus.is_empty() {
            return Err(ServiceError::InvalidRequest("empty sku list".into()));
        }
        let mut summary = BatchSummary {
            requested: skus.len(),
            ..Default::default()
        };
        for sku in skus {
            let req = GenerateRequest {
                sku: Some(sku.clone()),
                beam_size,
                ..Default::default()
            };
            match self.generate(&req) {
                Ok(a) if a.provenance == Provenance::Cache => summary.cached += 1,
                Ok(a) if a.eligible() => summary.enqueued += 1,
                Ok(_) => summary.filter_rejected += 1,
                Err(e) => {
                    summary.errored += 1;
                    summary.errors.push((sku.clone(), e.code().to_owned()));
                }
            }
        }
        Ok(summary)
    }

    pub fn stats(&self) -> Stats {
        let requests = self.requests.load(Ordering::Relaxed);
        let cache_hits = self.cache_hits.load(Ordering::Relaxed);
        let counts = self.events.counts(None);
        Stats {
            acceptance_rate_today: self.board.acceptance_rate_today(),
            ctr: counts.ctr().ok(),
            cvr: counts.cvr().ok(),
            cache_hit_rate: (requests > 0).then(|| cache_hits as f64 / requests as f64),
            requests,
            cache_hits,
            encoder_calls: self.counters.encoder_calls(),
            decoder_calls: self.counters.decoder_calls(),
            pending: self.board.pending_len(),
            model_version: self.current_model().map(|m| m.version.clone()),
            buckets: self.events.by_bucket(),
        }
    }

    pub fn health(&self) -> Health {
        let model_version = self.current_model().map(|m| m.version.clone());
        Health {
            status: if model_version.is_some() { "ok" } else { "no_model" }.into(),
            model_version,
        }
    }

    /// Encoder predictor over raw source tokens.
    pub fn predict_encode(&self, tokens: &[String]) -> Result<EncodedSource, ServiceError> {
        let model = self.require_model()?;
        let p = Predictors {
            model: &model,
            counters: &self.counters,
        };
        Ok(p.encode(tokens)?)
    }

    /// Decoder predictor: top-k next tokens for one prefix.
    pub fn predict_decode(&self, encoded: &EncodedSource, prefix: &[TokenId], k: usize) -> Result<Vec<Candidate>, ServiceError> {
        let model = self.require_model()?;
        let p = Predictors {
            model: &model,
            counters: &self.counters,
        };
        Ok(p.decode(encoded, prefix, k)?)
    }

    /// Fine-tunes a copy of the current model and installs it. Serving
    /// continues on the old model while training runs.
    pub fn retrain(&self, pairs: &[TrainPair], config: &TrainConfig) -> Result<String, ServiceError> {
        let current = self.require_model()?;
        let mut next = Model::clone(&current);
        train(&mut next, pairs, TrainObjective::Finetune, config)?;
        Ok(self.swap_model(next))
    }
}

/// Service with the system clock over a data directory.
pub fn open_service(dir: &DataDir, config: ServiceConfig) -> Result<Service, ServiceError> {
    Service::open(dir, config, Arc::new(SystemClock))
}

/// Training pairs for every record that carries a description.
pub fn record_pairs(records: &[ProductRecord], config: &LinearizeConfig) -> Result<Vec<TrainPair>, ServiceError> {
    let mut out = Vec::new();
    for r in records {
        if let Some(p) = TrainPair::from_record(r, config)? {
            out.push(p);
        }
    }
    Ok(out)
}
