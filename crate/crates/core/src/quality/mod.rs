//! Automatic metrics and post-generation filters.

mod filters;
mod grammar;
mod metrics;

pub use filters::{
    check_terms_numbers, normalize_number, CategoryLexicon, FilterVerdict, Reason, TermLexicon,
    FALLBACK_CATEGORY,
};
pub use grammar::{
    feature_usage, featurize, grammar_features, grammar_filter, synthetic_grammar_corpus,
    train_adaboost, Ensemble, RoundStats, Stump, FEATURE_COUNT, FEATURE_NAMES,
};
pub use metrics::{
    bleu, bleu_stats, meteor_lite, rouge, sacre_bleu, standard_tokenize, BleuStats, MeteorDetail,
    MetricReport, MetricScores, Prf, RougeVariant, Smoothing, METEOR_SEARCH_LIMIT,
};

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("invalid_max_n: n-gram order {0} outside 1..=4")]
    InvalidMaxN(usize),
    #[error("no_reference: at least one non-empty reference is required")]
    NoReference,
    #[error("single_class: training labels contain one class only")]
    SingleClass,
    #[error("invalid_rounds: boosting needs at least one round")]
    InvalidRounds,
    #[error("invalid_training_set: {0}")]
    InvalidTrainingSet(String),
    #[error("invalid_lexicon: {0}")]
    InvalidLexicon(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl QualityError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidMaxN(_) => "invalid_max_n",
            Self::NoReference => "no_reference",
            Self::SingleClass => "single_class",
            Self::InvalidRounds => "invalid_rounds",
            Self::InvalidTrainingSet(_) => "invalid_training_set",
            Self::InvalidLexicon(_) => "invalid_lexicon",
            Self::Io(_) => "io",
        }
    }
}
