//! Gloss chunk annotations and per-semantic-type dependency aggregation.
//!
//! Annotation lines hold three tab-separated fields: the sense id, the chunk
//! texts joined by `/`, and the chunk types joined by `/`. The first chunk is
//! untyped (`--`):
//!
//! ```text
//! syn000001	表/同一事件/在/後述時段/中/持續/發生。	--/Event/Preposition/Time/Preposition/Modifier/Action
//! ```

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vec2gloss_numerics::Real;

use super::{gloss_dependency, sample_replacement, AnalysisOptions};
use crate::corpus::{Sense, Tokenizer};
use crate::model::Model;
use crate::stats::{mean, standard_error};
use crate::{Error, Result};

pub const UNTYPED: &str = "--";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// Character offsets into the gloss.
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub sem_type: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkAnnotation {
    pub sense_id: String,
    pub chunks: Vec<Chunk>,
}

impl ChunkAnnotation {
    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        let sense_id = fields.first().copied().unwrap_or_default().to_string();
        let bad = |reason: String| Error::Annotation { sense_id: sense_id.clone(), reason };
        if fields.len() != 3 || sense_id.is_empty() {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let texts: Vec<&str> = fields[1].split('/').collect();
        let types: Vec<&str> = fields[2].split('/').collect();
        if texts.len() != types.len() {
            return Err(bad(format!("{} chunks but {} types", texts.len(), types.len())));
        }
        if types[0] != UNTYPED {
            return Err(bad(format!("first chunk must be untyped ({UNTYPED}), found {:?}", types[0])));
        }
        let mut chunks = Vec::with_capacity(texts.len());
        let mut pos = 0;
        for (text, ty) in texts.iter().zip(&types) {
            if text.is_empty() || ty.is_empty() {
                return Err(bad("empty chunk text or type".into()));
            }
            let n = text.chars().count();
            chunks.push(Chunk { start: pos, end: pos + n, text: text.to_string(), sem_type: ty.to_string() });
            pos += n;
        }
        Ok(Self { sense_id, chunks })
    }

    pub fn to_line(&self) -> String {
        let texts: Vec<&str> = self.chunks.iter().map(|c| c.text.as_str()).collect();
        let types: Vec<&str> = self.chunks.iter().map(|c| c.sem_type.as_str()).collect();
        format!("{}\t{}\t{}", self.sense_id, texts.join("/"), types.join("/"))
    }

    pub fn text(&self) -> String {
        self.chunks.iter().map(|c| c.text.as_str()).collect()
    }

    /// The chunks must reproduce `gloss` exactly.
    pub fn validate(&self, gloss: &str) -> Result<()> {
        if self.text() != gloss {
            return Err(Error::Annotation {
                sense_id: self.sense_id.clone(),
                reason: format!("chunks {:?} do not cover gloss {gloss:?}", self.text()),
            });
        }
        Ok(())
    }

    /// Chunk index covering gloss character `k`; positions past the end (an
    /// appended final period) belong to the last chunk.
    pub fn chunk_at(&self, k: usize) -> usize {
        self.chunks.iter().position(|c| k < c.end).unwrap_or(self.chunks.len() - 1)
    }
}

pub fn parse_annotations(content: &str) -> Result<Vec<ChunkAnnotation>> {
    content.lines().filter(|l| !l.is_empty()).map(ChunkAnnotation::parse_line).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeDependencyRow {
    pub semantic_type: String,
    pub n_chunks: usize,
    pub n_tokens: usize,
    pub mean_delta_sem: f64,
    pub se_sem: f64,
    pub mean_delta_ctx: f64,
    pub se_ctx: f64,
}

/// Token-level indices averaged by the semantic type of the covering chunk.
/// Types with fewer than `min_count` chunks are dropped; untyped chunks are
/// excluded. Replacements are drawn from `senses`.
pub fn chunk_dependency<T: Real>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    annotations: &[ChunkAnnotation],
    senses: &[Sense],
    seed: u64,
    min_count: usize,
    options: &AnalysisOptions,
) -> Result<Vec<TypeDependencyRow>> {
    let by_id: HashMap<&str, &Sense> = senses.iter().map(|s| (s.sense_id.as_str(), s)).collect();
    let mut order: Vec<&ChunkAnnotation> = annotations.iter().collect();
    order.sort_by(|a, b| a.sense_id.cmp(&b.sense_id));
    for a in &order {
        let sense = by_id.get(a.sense_id.as_str()).ok_or_else(|| Error::Annotation {
            sense_id: a.sense_id.clone(),
            reason: "no such sense".into(),
        })?;
        a.validate(&sense.gloss)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = options.replacements.max(1);
    let mut sem: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut ctx: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut chunk_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in order {
        let sense = by_id[a.sense_id.as_str()];
        let reps = (0..k).map(|_| sample_replacement(sense, senses, &mut rng)).collect::<Result<Vec<_>>>()?;
        let dep = gloss_dependency(model, tokenizer, sense, &reps, options)?;
        for c in &a.chunks {
            *chunk_counts.entry(c.sem_type.as_str()).or_insert(0) += 1;
        }
        let gloss_start = dep.tokens.iter().position(|t| t.in_gloss).unwrap_or(dep.tokens.len());
        for t in dep.tokens.iter().filter(|t| t.in_gloss) {
            let ty = a.chunks[a.chunk_at(t.position - gloss_start)].sem_type.as_str();
            if ty == UNTYPED {
                continue;
            }
            sem.entry(ty).or_default().push(t.delta_sem);
            ctx.entry(ty).or_default().push(t.delta_ctx);
        }
    }
    let mut rows = Vec::new();
    for (ty, s) in &sem {
        let n_chunks = chunk_counts[ty];
        if n_chunks < min_count {
            continue;
        }
        let c = &ctx[ty];
        rows.push(TypeDependencyRow {
            semantic_type: ty.to_string(),
            n_chunks,
            n_tokens: s.len(),
            mean_delta_sem: mean(s).expect("non-empty"),
            se_sem: standard_error(s),
            mean_delta_ctx: mean(c).expect("non-empty"),
            se_ctx: standard_error(c),
        });
    }
    Ok(rows)
}

pub fn type_table(rows: &[TypeDependencyRow]) -> String {
    let mut out = String::from("semantic_type\tn_chunks\tn_tokens\tmean_delta_sem\tse_sem\tmean_delta_ctx\tse_ctx\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.semantic_type, r.n_chunks, r.n_tokens, r.mean_delta_sem, r.se_sem, r.mean_delta_ctx, r.se_ctx
        ));
    }
    out
}
