use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Tokenizer};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub lambda: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Glosses longer than this many characters get a second span.
    pub second_span_threshold: usize,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { lambda: 2.0, min_len: 1, max_len: 4, second_span_threshold: 20, seed: 0 }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("span lambda must be positive, got {}", self.lambda)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidInput(format!("span lengths need 1 <= min_len <= max_len, got {}..{}", self.min_len, self.max_len)));
        }
        if self.second_span_threshold == 0 {
            return Err(Error::InvalidInput("second span threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Poisson(λ) draw clipped into `[min_len, max_len]`.
pub fn sample_span_length<R: Rng + ?Sized>(rng: &mut R, config: &CorruptionConfig) -> usize {
    let draw: f64 = Poisson::new(config.lambda).expect("validated lambda").sample(rng);
    (draw as usize).clamp(config.min_len, config.max_len)
}

/// A gloss character or a numbered sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symbol {
    Char(char),
    Sentinel(usize),
}

/// Gloss with dropped spans replaced by sentinels, and the dropped spans each
/// preceded by their sentinel. The target ends with one closing sentinel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoisePair {
    pub input: Vec<Symbol>,
    pub target: Vec<Symbol>,
    /// A second span was due but found no room.
    pub skipped_span: bool,
}

fn render(symbols: &[Symbol]) -> String {
    let mut s = String::new();
    for sym in symbols {
        match sym {
            Symbol::Char(c) => s.push(*c),
            Symbol::Sentinel(i) => s.push_str(&format!("<X{i}>")),
        }
    }
    s
}

fn ids(symbols: &[Symbol], tokenizer: &Tokenizer) -> Vec<TokenId> {
    let mut buf = [0u8; 4];
    symbols
        .iter()
        .map(|sym| match sym {
            Symbol::Char(c) => tokenizer.encode(c.encode_utf8(&mut buf))[0],
            Symbol::Sentinel(i) => tokenizer.sentinel(*i),
        })
        .collect()
}

impl DenoisePair {
    pub fn input_ids(&self, tokenizer: &Tokenizer) -> Vec<TokenId> {
        ids(&self.input, tokenizer)
    }

    pub fn target_ids(&self, tokenizer: &Tokenizer) -> Vec<TokenId> {
        ids(&self.target, tokenizer)
    }

    pub fn input_text(&self) -> String {
        render(&self.input)
    }

    pub fn target_text(&self) -> String {
        render(&self.target)
    }

    pub fn num_spans(&self) -> usize {
        self.input.iter().filter(|s| matches!(s, Symbol::Sentinel(_))).count()
    }
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Replace one random span of `gloss` (two when it is longer than the
/// threshold) with sentinels.
pub fn corrupt<R: Rng + ?Sized>(gloss: &str, rng: &mut R, config: &CorruptionConfig) -> Result<DenoisePair> {
    config.validate()?;
    let chars: Vec<char> = gloss.chars().collect();
    let n = chars.len();
    if n < config.min_len {
        return Err(Error::GlossTooShort { len: n });
    }
    let len = sample_span_length(rng, config).min(n);
    let start = rng.random_range(0..=n - len);
    let mut spans = vec![(start, start + len)];
    let mut skipped_span = false;
    if n > config.second_span_threshold {
        let len = sample_span_length(rng, config).min(n);
        let mut second = None;
        for _ in 0..100 {
            let s = rng.random_range(0..=n - len);
            if !overlaps((s, s + len), spans[0]) {
                second = Some((s, s + len));
                break;
            }
        }
        let second = second.or_else(|| (0..=n - len).map(|s| (s, s + len)).find(|&c| !overlaps(c, spans[0])));
        match second {
            Some(span) => spans.push(span),
            None => skipped_span = true,
        }
    }
    spans.sort_unstable();
    let mut input = Vec::with_capacity(n);
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, &(s, e)) in spans.iter().enumerate() {
        input.extend(chars[pos..s].iter().map(|&c| Symbol::Char(c)));
        input.push(Symbol::Sentinel(k));
        target.push(Symbol::Sentinel(k));
        target.extend(chars[s..e].iter().map(|&c| Symbol::Char(c)));
        pos = e;
    }
    input.extend(chars[pos..].iter().map(|&c| Symbol::Char(c)));
    target.push(Symbol::Sentinel(spans.len()));
    Ok(DenoisePair { input, target, skipped_span })
}

/// Reinsert the target's spans at the input's sentinels.
pub fn splice(input: &[Symbol], target: &[Symbol]) -> Result<String> {
    let mut spans: Vec<Vec<char>> = Vec::new();
    let mut expected = 0;
    for sym in target {
        match *sym {
            Symbol::Sentinel(i) if i == expected => {
                spans.push(Vec::new());
                expected += 1;
            }
            Symbol::Sentinel(i) => return Err(Error::InvalidInput(format!("target sentinel X{i} out of order"))),
            Symbol::Char(c) => spans
                .last_mut()
                .ok_or_else(|| Error::InvalidInput("target does not start with a sentinel".into()))?
                .push(c),
        }
    }
    let mut out = String::new();
    let mut next = 0;
    for sym in input {
        match *sym {
            Symbol::Char(c) => out.push(c),
            Symbol::Sentinel(i) if i == next && i < spans.len() => {
                out.extend(&spans[i]);
                next += 1;
            }
            Symbol::Sentinel(i) => return Err(Error::InvalidInput(format!("input sentinel X{i} has no span"))),
        }
    }
    Ok(out)
}

impl fmt::Display for DenoisePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.input_text(), self.target_text())
    }
}
