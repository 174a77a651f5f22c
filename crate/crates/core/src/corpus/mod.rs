//! Lexical data model, sense files, tokenizer and the synthetic gloss language.

mod format;
mod split;
pub mod synth;
mod tokenizer;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use format::{load_senses, parse_senses, write_senses, RecordError, RecordErrorKind};
pub use split::split;
pub use synth::{synth_corpus, SynthCorpus, SynthSpec};
pub use tokenizer::{TokenId, Tokenizer, BOS, EOS, NUM_SENTINELS, PAD, UNK};

use crate::{Error, Result};

/// Coarse lexical category used for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosCategory {
    N,
    V,
    D,
    O,
    Nb,
}

impl PosCategory {
    pub const ALL: [PosCategory; 5] = [Self::N, Self::V, Self::D, Self::O, Self::Nb];
    /// The four categories of the dependency and rating analyses (no proper names).
    pub const CONTENT: [PosCategory; 4] = [Self::N, Self::V, Self::D, Self::O];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::N => "N",
            Self::V => "V",
            Self::D => "D",
            Self::O => "O",
            Self::Nb => "Nb",
        }
    }
}

impl fmt::Display for PosCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// CKIP-style tags found in Chinese Wordnet sense inventories.
const KNOWN_TAGS: &[&str] = &[
    "N", "V", "D", "O", "Nb", "A", "Caa", "Cab", "Cba", "Cbb", "Da", "Dfa", "Dfb", "Di", "Dk", "Na", "Nc",
    "Ncd", "Nd", "Nep", "Neqa", "Neqb", "Nes", "Neu", "Nf", "Ng", "Nh", "Nv", "I", "P", "T", "VA", "VAC", "VB",
    "VC", "VCL", "VD", "VE", "VF", "VG", "VH", "VHC", "VI", "VJ", "VK", "VL", "V_2", "DE", "SHI", "FW",
];

/// Part-of-speech label as written in the gloss target, e.g. `VA` or `Na`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PosTag(String);

impl PosTag {
    pub fn parse(tag: &str) -> Option<Self> {
        KNOWN_TAGS.contains(&tag).then(|| Self(tag.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn category(&self) -> PosCategory {
        let t = self.0.as_str();
        match t {
            "Nb" => PosCategory::Nb,
            "DE" => PosCategory::O,
            _ if t.starts_with('N') => PosCategory::N,
            _ if t.starts_with('V') => PosCategory::V,
            _ if t.starts_with('D') => PosCategory::D,
            _ => PosCategory::O,
        }
    }
}

impl From<PosCategory> for PosTag {
    fn from(c: PosCategory) -> Self {
        Self(c.as_str().to_string())
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Example sentence with the target word's character span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl ExampleSentence {
    /// Validates the span against `lemma`.
    pub fn new(text: impl Into<String>, start: usize, end: usize, lemma: &str) -> Result<Self> {
        let ex = Self { text: text.into(), start, end };
        ex.check(lemma)?;
        Ok(ex)
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn span_text(&self) -> String {
        self.text.chars().skip(self.start).take(self.end.saturating_sub(self.start)).collect()
    }

    pub fn check(&self, lemma: &str) -> Result<()> {
        let n = self.char_len();
        if !(self.start < self.end && self.end <= n) {
            return Err(Error::InvalidInput(format!(
                "bad offsets {},{} for a sentence of {n} characters",
                self.start, self.end
            )));
        }
        let found = self.span_text();
        if found != lemma {
            return Err(Error::SpanMismatch { expected: lemma.to_string(), found });
        }
        Ok(())
    }

    /// Parse a sentence whose target is wrapped in `〈…〉` (or `<…>`).
    pub fn from_bracketed(marked: &str) -> Result<Self> {
        let mut text = String::new();
        let (mut start, mut end) = (None, None);
        let mut pos = 0usize;
        for c in marked.chars() {
            match c {
                '〈' | '<' if start.is_none() => start = Some(pos),
                '〉' | '>' if start.is_some() && end.is_none() => end = Some(pos),
                _ => {
                    text.push(c);
                    pos += 1;
                }
            }
        }
        match (start, end) {
            (Some(s), Some(e)) if s < e => Ok(Self { text, start: s, end: e }),
            _ => Err(Error::InvalidInput(format!("no bracketed target in {marked:?}"))),
        }
    }

    pub fn bracketed(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.text.chars().enumerate() {
            if i == self.start {
                out.push('〈');
            }
            out.push(c);
            if i + 1 == self.end {
                out.push('〉');
            }
        }
        out
    }
}

/// One meaning of a lemma with its gloss and example sentences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sense {
    pub sense_id: String,
    pub lemma: String,
    pub pos: PosTag,
    pub gloss: String,
    pub examples: Vec<ExampleSentence>,
}

impl Sense {
    pub fn category(&self) -> PosCategory {
        self.pos.category()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gloss.is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty gloss", self.sense_id)));
        }
        if self.lemma.is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty lemma", self.sense_id)));
        }
        self.examples.iter().try_for_each(|e| e.check(&self.lemma))
    }
}
