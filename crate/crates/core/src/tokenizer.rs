//! Word-level tokenizer with a corpus-closed vocabulary.
//!
//! Normalization lowercases the input and splits it into maximal runs of
//! alphanumeric characters; everything else (whitespace, punctuation) is a
//! boundary and is discarded. Ids `0..3` are reserved for `[COPY]`, `[EOS]`
//! and `[UNK]`; ordinary words follow in lexicographic order.

use std::collections::{BTreeSet, HashMap};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryRecord};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const COPY_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

pub const COPY_TOKEN: &str = "[COPY]";
pub const EOS_TOKEN: &str = "[EOS]";
pub const UNK_TOKEN: &str = "[UNK]";

const SPECIALS: [&str; 3] = [COPY_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// A sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }

    pub fn starts_with_copy(&self) -> bool {
        self.0.first() == Some(&COPY_ID)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }
}

/// Byte ranges of the words in `s`, before lowercasing.
pub fn word_spans(s: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut chars = s.char_indices().peekable();
    std::iter::from_fn(move || {
        let start = loop {
            let (i, c) = chars.next()?;
            if c.is_alphanumeric() {
                break i;
            }
        };
        let mut end = s.len();
        while let Some(&(i, c)) = chars.peek() {
            if !c.is_alphanumeric() {
                end = i;
                break;
            }
            chars.next();
        }
        Some((start, end))
    })
}

/// Normalized words of `s`.
pub fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    word_spans(s).map(move |(a, b)| s[a..b].to_lowercase())
}

/// Number of tokens `s` encodes to. Does not need a vocabulary.
pub fn token_count(s: &str) -> usize {
    word_spans(s).count()
}

/// Lowercased words joined by single spaces.
pub fn normalize(s: &str) -> String {
    words(s).collect::<Vec<_>>().join(" ")
}

/// Prefix of `text` holding at most `max_tokens` tokens, cut right after the
/// last kept word. Text within budget is returned unchanged.
pub fn truncate_to_tokens(text: &str, max_tokens: usize) -> &str {
    if max_tokens == 0 {
        return "";
    }
    match word_spans(text).nth(max_tokens - 1) {
        Some((_, end)) if word_spans(&text[end..]).next().is_some() => &text[..end],
        _ => text,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialIds {
    pub copy_id: TokenId,
    pub eos_id: TokenId,
    pub unk_id: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an arbitrary word set; specials are prepended.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(
                sorted
                    .into_iter()
                    .filter(|w| !SPECIALS.contains(&w.as_str())),
            )
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary {
            tokens,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> SpecialIds {
        SpecialIds {
            copy_id: COPY_ID,
            eos_id: EOS_ID,
            unk_id: UNK_ID,
        }
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.token_to_id.get(word).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, s: &str) -> TokenSeq {
        TokenSeq(words(s).map(|w| self.id(&w).unwrap_or(UNK_ID)).collect())
    }

    /// Encoded docid terminated by `[EOS]`.
    pub fn encode_docid(&self, doc_id: &str) -> TokenSeq {
        let mut seq = self.encode(doc_id);
        seq.0.push(EOS_ID);
        seq
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decodes an encoded docid path, dropping `[COPY]` and `[EOS]`.
    pub fn decode_docid(&self, ids: &[TokenId]) -> String {
        let body: Vec<TokenId> = ids
            .iter()
            .copied()
            .filter(|&id| id != COPY_ID && id != EOS_ID)
            .collect();
        self.decode(&body)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tokens": self.tokens,
            "specials": { "copy": COPY_ID, "eos": EOS_ID, "unk": UNK_ID },
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Specials {
            copy: TokenId,
            eos: TokenId,
            unk: TokenId,
        }
        #[derive(Deserialize)]
        struct Raw {
            tokens: Vec<String>,
            specials: Specials,
        }
        let raw: Raw = serde_json::from_value(value.clone())
            .map_err(|e| Error::invalid(format!("vocabulary: {e}")))?;
        let sp = &raw.specials;
        if (sp.copy, sp.eos, sp.unk) != (COPY_ID, EOS_ID, UNK_ID)
            || raw.tokens.len() < SPECIALS.len()
            || raw.tokens[..3] != SPECIALS
        {
            return Err(Error::invalid(
                "vocabulary: specials must be [COPY]=0, [EOS]=1, [UNK]=2",
            ));
        }
        let vocab = Self::from_tokens(raw.tokens);
        if vocab.token_to_id.len() != vocab.tokens.len() {
            return Err(Error::invalid("vocabulary: duplicate tokens"));
        }
        Ok(vocab)
    }
}

/// Vocabulary covering every word of every title, body, compressed body and
/// query text.
pub fn build_vocab(corpus: &Corpus, queries: &[QueryRecord]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut all = BTreeSet::new();
    for doc in corpus.documents() {
        all.extend(words(&doc.title));
        all.extend(words(&doc.text));
        if let Some(c) = &doc.compressed_text {
            all.extend(words(c));
        }
    }
    for q in queries {
        all.extend(words(&q.text));
    }
    Ok(Vocabulary::from_words(all))
}
