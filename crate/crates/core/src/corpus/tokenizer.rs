use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_SENTINELS: usize = 100;
const FIRST_SENTINEL: TokenId = 4;
const FIRST_CHAR: TokenId = FIRST_SENTINEL + NUM_SENTINELS;

/// Character-level tokenizer: four specials, sentinels `X0..X99`, then one id
/// per character in sorted code-point order.
///
/// Plain text only ever maps to character ids or `UNK`, so sentinels cannot be
/// produced from text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    chars: String,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Tokenizer::from_chars(r.chars.chars())
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr { chars: t.chars.iter().collect() }
    }
}

impl Tokenizer {
    /// Vocabulary over every character of `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::from_chars(set)
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, FIRST_CHAR + i)).collect();
        Self { chars, index }
    }

    /// Vocabulary covering all text of a corpus: lemmas, glosses, POS tags and
    /// example sentences, plus the full-width period used in targets.
    pub fn for_senses(senses: &[super::Sense]) -> Self {
        let mut texts: Vec<&str> = vec!["。"];
        for s in senses {
            texts.extend([s.lemma.as_str(), s.gloss.as_str(), s.pos.as_str()]);
            texts.extend(s.examples.iter().map(|e| e.text.as_str()));
        }
        Self::build(texts)
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_CHAR + self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn sentinel(&self, i: usize) -> TokenId {
        assert!(i < NUM_SENTINELS, "sentinel index {i} out of range");
        FIRST_SENTINEL + i
    }

    pub fn sentinel_index(&self, id: TokenId) -> Option<usize> {
        (FIRST_SENTINEL..FIRST_CHAR).contains(&id).then(|| id - FIRST_SENTINEL)
    }

    pub fn char_id(&self, c: char) -> Option<TokenId> {
        self.index.get(&c).copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id < FIRST_CHAR
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_with_unknowns(text).0
    }

    /// Token ids plus the number of characters mapped to `UNK`.
    pub fn encode_with_unknowns(&self, text: &str) -> (Vec<TokenId>, usize) {
        let mut unknown = 0;
        let ids = text
            .chars()
            .map(|c| {
                self.char_id(c).unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (ids, unknown)
    }

    /// Text for `ids`. `PAD`/`BOS`/`EOS` are dropped, sentinels render as
    /// `<Xn>`, `UNK` as U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push('\u{FFFD}'),
                _ => {
                    if let Some(i) = self.sentinel_index(id) {
                        out.push_str(&format!("<X{i}>"));
                    } else if let Some(&c) = self.chars.get(id - FIRST_CHAR) {
                        out.push(c);
                    } else {
                        out.push('\u{FFFD}');
                    }
                }
            }
        }
        out
    }

    pub fn contains_all(&self, ids: &[TokenId]) -> bool {
        ids.iter().all(|&id| id < self.vocab_size())
    }
}
