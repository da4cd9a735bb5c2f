use apcg_core::corpus::CorpusError;
use apcg_core::decode::DecodeError;
use apcg_core::model::ModelError;
use apcg_core::quality::QualityError;

use crate::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown_product: no record for sku {0:?}")]
    UnknownProduct(String),
    #[error("model_unavailable: no model is loaded")]
    ModelUnavailable,
    #[error("not_found: {0}")]
    NotFound(String),
    #[error("already_reviewed: artifact {0} is not pending")]
    AlreadyReviewed(String),
    #[error("not_eligible: artifact {0} was rejected by the filters")]
    NotEligible(String),
    #[error("invalid_request: {0}")]
    InvalidRequest(String),
    #[error("ctr_undefined: no page views")]
    CtrUndefined,
    #[error("cvr_undefined: no clicks")]
    CvrUndefined,
    #[error("non_monotone_timestamp: {0}")]
    NonMonotone(String),
    #[error("empty_workload: the bench needs at least one request")]
    EmptyWorkload,
    #[error("no_completed_requests: every bench request failed")]
    NoCompleted,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownProduct(_) => "unknown_product",
            Self::ModelUnavailable => "model_unavailable",
            Self::NotFound(_) => "not_found",
            Self::AlreadyReviewed(_) => "already_reviewed",
            Self::NotEligible(_) => "not_eligible",
            Self::InvalidRequest(_) => "invalid_request",
            Self::CtrUndefined => "ctr_undefined",
            Self::CvrUndefined => "cvr_undefined",
            Self::NonMonotone(_) => "non_monotone_timestamp",
            Self::EmptyWorkload => "empty_workload",
            Self::NoCompleted => "no_completed_requests",
            Self::Decode(e) => e.code(),
            Self::Model(e) => e.code(),
            Self::Corpus(_) => "corpus",
            Self::Quality(e) => e.code(),
            Self::Store(_) => "store",
            Self::Io(_) => "io",
            Self::Json(_) => "invalid_json",
            Self::Internal(_) => "internal",
        }
    }
}
