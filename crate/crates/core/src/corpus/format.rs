//! Line-delimited sense files.
//!
//! One sense per LF-terminated line, five tab-separated fields:
//!
//! ```text
//! sense_id <TAB> pos <TAB> lemma <TAB> gloss <TAB> examples
//! ```
//!
//! `examples` is a `‖`-separated list of `start,end,text` items where the
//! offsets are character (not byte) positions of the lemma in `text`. The field
//! may be empty. See `docs/formats.md` for the grammar.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use super::{ExampleSentence, PosTag, Sense};
use crate::{Error, Result};

pub const EXAMPLE_SEPARATOR: char = '‖';

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecordErrorKind {
    FieldCount(usize),
    EmptyField(&'static str),
    UnknownPos(String),
    BadOffsets(String),
    SpanLemmaMismatch { lemma: String, span: String },
    DuplicateSenseId(String),
    ReservedCharacter(char),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordError {
    /// 1-based line number.
    pub line: usize,
    pub kind: RecordErrorKind,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: ", self.line)?;
        match &self.kind {
            RecordErrorKind::FieldCount(n) => write!(f, "expected 5 tab-separated fields, found {n}"),
            RecordErrorKind::EmptyField(name) => write!(f, "empty {name}"),
            RecordErrorKind::UnknownPos(p) => write!(f, "unknown POS {p:?}"),
            RecordErrorKind::BadOffsets(s) => write!(f, "bad offsets: {s}"),
            RecordErrorKind::SpanLemmaMismatch { lemma, span } => {
                write!(f, "span/lemma mismatch (span {span:?}, lemma {lemma:?})")
            }
            RecordErrorKind::DuplicateSenseId(id) => write!(f, "duplicate sense_id {id}"),
            RecordErrorKind::ReservedCharacter(c) => write!(f, "reserved character {c:?} in field"),
        }
    }
}

fn parse_example(item: &str, lemma: &str) -> std::result::Result<ExampleSentence, RecordErrorKind> {
    let mut parts = item.splitn(3, ',');
    let (Some(s), Some(e), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(RecordErrorKind::BadOffsets(format!("malformed example item {item:?}")));
    };
    let (start, end) = match (s.parse::<usize>(), e.parse::<usize>()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(RecordErrorKind::BadOffsets(format!("non-numeric offsets {s:?},{e:?}"))),
    };
    let n = text.chars().count();
    if !(start < end && end <= n) {
        return Err(RecordErrorKind::BadOffsets(format!("{start},{end} outside a {n}-character sentence")));
    }
    let ex = ExampleSentence { text: text.to_string(), start, end };
    let span = ex.span_text();
    if span != lemma {
        return Err(RecordErrorKind::SpanLemmaMismatch { lemma: lemma.to_string(), span });
    }
    Ok(ex)
}

fn parse_line(line: &str) -> std::result::Result<Sense, RecordErrorKind> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(RecordErrorKind::FieldCount(fields.len()));
    }
    let names = ["sense_id", "pos", "lemma", "gloss"];
    for (f, name) in fields.iter().zip(names) {
        if f.is_empty() {
            return Err(RecordErrorKind::EmptyField(name));
        }
        if f.contains(EXAMPLE_SEPARATOR) {
            return Err(RecordErrorKind::ReservedCharacter(EXAMPLE_SEPARATOR));
        }
    }
    let pos = PosTag::parse(fields[1]).ok_or_else(|| RecordErrorKind::UnknownPos(fields[1].to_string()))?;
    let lemma = fields[2];
    let examples = if fields[4].is_empty() {
        Vec::new()
    } else {
        fields[4].split(EXAMPLE_SEPARATOR).map(|item| parse_example(item, lemma)).collect::<std::result::Result<_, _>>()?
    };
    Ok(Sense {
        sense_id: fields[0].to_string(),
        lemma: lemma.to_string(),
        pos,
        gloss: fields[3].to_string(),
        examples,
    })
}

/// Parse sense records, collecting every malformed line.
pub fn parse_senses(content: &str) -> Result<Vec<Sense>> {
    let mut senses = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(s) => {
                if !seen.insert(s.sense_id.clone()) {
                    errors.push(RecordError { line: i + 1, kind: RecordErrorKind::DuplicateSenseId(s.sense_id) });
                } else {
                    senses.push(s);
                }
            }
            Err(kind) => errors.push(RecordError { line: i + 1, kind }),
        }
    }
    if errors.is_empty() {
        Ok(senses)
    } else {
        Err(Error::Records(errors))
    }
}

pub fn load_senses(path: impl AsRef<Path>) -> Result<Vec<Sense>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_senses(&content)
}

pub fn write_senses(senses: &[Sense]) -> String {
    let mut out = String::new();
    for s in senses {
        let examples: Vec<String> = s.examples.iter().map(|e| format!("{},{},{}", e.start, e.end, e.text)).collect();
        let sep = EXAMPLE_SEPARATOR.to_string();
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", s.sense_id, s.pos, s.lemma, s.gloss, examples.join(&sep)));
    }
    out
}
