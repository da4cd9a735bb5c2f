use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub type TokenId = usize;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const TITLE: &str = "<title>";
pub const ATTR: &str = "<attr>";
pub const SLOGAN: &str = "<slogan>";
pub const EXTRA: &str = "<extra>";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 9] = [PAD, BOS, EOS, UNK, SEP, TITLE, ATTR, SLOGAN, EXTRA];

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const SEP_ID: TokenId = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    #[default]
    Whitespace,
    Character,
}

/// Splits `text` into tokens. Character mode yields one token per
/// non-whitespace character and a single `" "` per whitespace run.
pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
        TokenizeMode::Character => {
            let mut out: Vec<String> = Vec::new();
            for ch in text.trim().chars() {
                if ch.is_whitespace() {
                    if out.last().map(String::as_str) != Some(" ") {
                        out.push(" ".to_owned());
                    }
                } else {
                    out.push(ch.to_string());
                }
            }
            out
        }
    }
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S], mode: TokenizeMode) -> String {
    match mode {
        TokenizeMode::Whitespace => tokens
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" "),
        TokenizeMode::Character => tokens.iter().map(AsRef::as_ref).collect(),
    }
}

/// Token/id bijection with the reserved specials at the lowest ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocab::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < SPECIALS.len()
            || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s)
        {
            return Err(CorpusError::InvalidVocab("specials missing or out of order".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Ranks tokens by descending frequency, ties broken lexicographically.
    /// Tokens seen fewer than `min_freq` times are left out and encode to UNK.
    pub fn build<I, S>(sequences: I, min_freq: usize, max_size: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        if max_size < SPECIALS.len() {
            return Err(CorpusError::VocabTooSmall {
                max_size,
                specials: SPECIALS.len(),
            });
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for seq in sequences {
            seen_any = true;
            for tok in seq {
                let tok = tok.as_ref();
                if SPECIALS.contains(&tok) {
                    continue;
                }
                *counts.entry(tok.to_owned()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn encode_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.encode(t.as_ref())).collect()
    }

    pub fn decode(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ws(s: &str) -> Vec<String> {
        tokenize(s, TokenizeMode::Whitespace)
    }

    #[test]
    fn tokenize_modes() {
        assert!(ws("").is_empty());
        assert_eq!(ws("red silk dress"), vec!["red", "silk", "dress"]);
        assert_eq!(tokenize("abcde", TokenizeMode::Character).len(), 5);
        assert_eq!(
            tokenize(" a  b ", TokenizeMode::Character),
            vec!["a", " ", "b"]
        );
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build([ws("a a b")], 1, 100).unwrap();
        assert!(v.get("a").unwrap() < v.get("b").unwrap());
        assert_eq!(v.get("a"), Some(SPECIALS.len()));

        let v = Vocab::build([ws("a a b")], 2, 100).unwrap();
        assert_eq!(v.get("b"), None);
        assert_eq!(v.encode("b"), UNK_ID);

        let v = Vocab::build([ws("zeta alpha")], 1, 100).unwrap();
        assert!(v.get("alpha").unwrap() < v.get("zeta").unwrap());
    }

    #[test]
    fn max_size_truncates_and_validates() {
        let v = Vocab::build([ws("a a a b b c")], 1, SPECIALS.len() + 2).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert!(v.contains("b") && !v.contains("c"));
        assert!(matches!(
            Vocab::build([ws("a")], 1, 4),
            Err(CorpusError::VocabTooSmall { .. })
        ));
        assert!(matches!(
            Vocab::build(Vec::<Vec<String>>::new(), 1, 100),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn specials_have_fixed_ids() {
        let v = Vocab::build([ws("x")], 1, 20).unwrap();
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.get(s), Some(i));
        }
        assert_eq!(v.encode(BOS), BOS_ID);
        assert_eq!(v.encode(EOS), EOS_ID);
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(words in proptest::collection::vec("[a-f]{1,3}", 1..40)) {
            let v = Vocab::build([words.clone()], 1, 1000).unwrap();
            for id in 0..v.len() {
                let tok = v.decode(id).unwrap();
                prop_assert_eq!(v.encode(tok), id);
            }
            for w in &words {
                prop_assert_eq!(v.decode(v.encode(w)), Some(w.as_str()));
            }
        }

        #[test]
        fn whitespace_round_trip(text in "[a-z ]{0,30}") {
            let toks = ws(&text);
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(detokenize(&toks, TokenizeMode::Whitespace), normalized);
        }

        #[test]
        fn character_round_trip(text in "[a-z ]{0,30}") {
            let toks = tokenize(&text, TokenizeMode::Character);
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(detokenize(&toks, TokenizeMode::Character), normalized);
        }
    }
}
