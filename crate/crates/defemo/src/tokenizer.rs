//! Word-level vocabulary and encoding of single texts and (text, definition)
//! pairs into token-id sequences with `[CLS]`/`[SEP]` special tokens.
//!
//! ```
//! use defemo::tokenizer::{self, CLS, SEP};
//!
//! let corpus = vec!["I love this, really".to_string()];
//! let vocab = tokenizer::build_vocab(corpus.iter(), 1, 100).unwrap();
//! let seq = tokenizer::encode_pair(
//!     "I love this", "A feeling of pleasure.", &vocab, 32, false,
//! ).unwrap();
//! assert_eq!(seq.ids[0], CLS);
//! assert_eq!(seq.ids.iter().filter(|&&id| id == SEP).count(), 1);
//! // segment 0 covers [CLS] + text, segment 1 covers the definition
//! assert_eq!(seq.segment_ids[0], 0);
//! assert_eq!(*seq.segment_ids.last().unwrap(), 1);
//! ```

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, Write};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIALS: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Token <-> id bijection with the five reserved special ids.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { token_to_id, id_to_token }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }

    /// One non-special token per line; line number == id - 5.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        for token in &self.id_to_token[NUM_SPECIALS..] {
            writeln!(w, "{token}")?;
        }
        Ok(())
    }

    pub fn load(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let token = line.trim();
            if token.is_empty() {
                return Err(Error::Parse { line: i + 1, msg: "empty vocabulary line".into() });
            }
            tokens.push(token.to_string());
        }
        let vocab = Vocabulary::from_tokens(tokens);
        if vocab.token_to_id.len() != vocab.id_to_token.len() {
            return Err(Error::Data("duplicate token in vocabulary file".into()));
        }
        Ok(vocab)
    }
}

/// Encoded sequence; `segment_ids` are 0 over the text part (incl. CLS and
/// SEP) and 1 over the definition part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowercase and split on whitespace and punctuation boundaries; punctuation
/// marks are kept as single-char tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Frequency-ordered vocabulary, lexicographic tie-break, truncated to
/// `max_size` ids including the specials.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_freq < 1 {
        return Err(Error::Config("min_freq must be >= 1".into()));
    }
    if max_size <= NUM_SPECIALS {
        return Err(Error::Config(format!("max_size must be > {NUM_SPECIALS}")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut saw_text = false;
    for text in corpus {
        saw_text = true;
        for token in normalize_tokens(text.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    if !saw_text {
        return Err(Error::Data("empty corpus".into()));
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size - NUM_SPECIALS);
    Ok(Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t).collect()))
}

fn ids_of(tokens: &[String], vocab: &Vocabulary) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id_of(t).unwrap_or(UNK)).collect()
}

/// `{[CLS], w_1, ..., w_n}`, truncated from the right to `max_len`.
pub fn encode_single(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::Config("max_len must be >= 2".into()));
    }
    let mut ids = vec![CLS];
    ids.extend(ids_of(&normalize_tokens(text), vocab));
    ids.truncate(max_len);
    let segment_ids = vec![0; ids.len()];
    Ok(TokenSequence { ids, segment_ids })
}

/// `{[CLS], w_x1..w_xn, [SEP], w_c1..w_cm}` with no trailing SEP unless
/// `trailing_sep` is set. When over `max_len`, text tokens are trimmed before
/// definition tokens.
pub fn encode_pair(
    text: &str,
    definition: &str,
    vocab: &Vocabulary,
    max_len: usize,
    trailing_sep: bool,
) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::Config("max_len must be >= 3".into()));
    }
    if definition.trim().is_empty() {
        return Err(Error::Data("pair encoding requires a non-empty definition".into()));
    }
    let mut text_ids = ids_of(&normalize_tokens(text), vocab);
    let mut def_ids = ids_of(&normalize_tokens(definition), vocab);
    let overhead = 2 + usize::from(trailing_sep); // CLS + SEP (+ trailing SEP)
    let budget = max_len - overhead;
    if text_ids.len() + def_ids.len() > budget {
        let keep_text = budget.saturating_sub(def_ids.len());
        text_ids.truncate(keep_text);
        def_ids.truncate(budget - text_ids.len());
    }
    let mut ids = Vec::with_capacity(overhead + text_ids.len() + def_ids.len());
    ids.push(CLS);
    ids.extend(&text_ids);
    ids.push(SEP);
    let split = ids.len();
    ids.extend(&def_ids);
    if trailing_sep {
        ids.push(SEP);
    }
    let mut segment_ids = vec![0; split];
    segment_ids.resize(ids.len(), 1);
    Ok(TokenSequence { ids, segment_ids })
}

/// Map ids back to tokens (drops nothing; specials render as their names).
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.token_of(id).unwrap_or("[UNK]").to_string())
        .collect()
}
