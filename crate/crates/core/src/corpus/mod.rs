//! Product records, tokenization, vocabulary, cleaning and pre-training pairs.

mod clean;
mod pretrain;
mod record;
mod synthetic;
mod vocab;

pub use clean::{clean_corpus, CleanReport, CleanRules};
pub use pretrain::{
    lcs_length, make_psg_example, make_sr_example, psg_select, psg_select_count, split_sentences,
    Document, Objective, PretrainExample, PretrainMeta, PsgConfig, PSG_EXACT_LIMIT,
};
pub use record::{
    linearize_product, read_corpus, read_jsonl, write_jsonl, Attribute, LinearizeConfig,
    ProductRecord,
};
pub use synthetic::synthetic_records;
pub use vocab::{
    detokenize, tokenize, TokenId, TokenizeMode, Vocab, ATTR, BOS, BOS_ID, EOS, EOS_ID, EXTRA,
    PAD, PAD_ID, SEP, SEP_ID, SLOGAN, SPECIALS, TITLE, UNK, UNK_ID,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {0:?} has an empty title")]
    EmptyTitle(String),
    #[error("empty_document: no sentence content")]
    EmptyDocument,
    #[error("too_few_sentences: need at least 2, got {m}")]
    TooFewSentences { m: usize },
    #[error("vocabulary max size {max_size} cannot hold the {specials} reserved tokens")]
    VocabTooSmall { max_size: usize, specials: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
