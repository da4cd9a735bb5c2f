//! Transformer-pointer product copywriting.
//!
//! * [`numerics`]: tensors, reverse-mode differentiation, Adam.
//! * [`corpus`]: product records, tokenization, vocabulary, cleaning and the
//!   sentence re-ordering / pseudo-summary pre-training builders.
//! * [`model`]: the transformer encoder-decoder with a copy head, training and
//!   checkpoints.
//! * [`decode`]: split encoder/decoder predictors, greedy and beam search.
//! * [`quality`]: BLEU/ROUGE/Meteor-lite and the post-generation filters.

pub mod corpus;
pub mod decode;
pub mod model;
pub mod numerics;
pub mod quality;
