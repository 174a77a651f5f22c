//! Token dependency indices.
//!
//! For each reference token under teacher forcing, `p_full` is its
//! probability given the sense's own vector and the full preceding context,
//! `p_rep` the same with a same-category sense's vector substituted, and
//! `p_mask` the probability with all preceding context removed. The indices
//! are `δ_sem = -log(p_rep / p_full)` and `δ_ctx = -log(p_mask / p_full)`.
//! Log-probabilities are accumulated in 64-bit.

mod chunks;
mod rating;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vec2gloss_numerics::{Array, Real};

use crate::corpus::{PosCategory, Sense, TokenId, Tokenizer, BOS};
use crate::metrics::{sense_vector, VectorSource};
use crate::model::{DecoderMask, Model, SemanticVector};
use crate::pipeline::target_text;
use crate::stats::{mean, standard_error};
use crate::{Error, Result};

pub use chunks::{chunk_dependency, parse_annotations, type_table, Chunk, ChunkAnnotation, TypeDependencyRow, UNTYPED};
pub use rating::{make_rating_items, AnswerKeyEntry, DefinitionSource, RatingItem, RatingSheet};

fn log_probs<T: Real>(logits: &Array<T>, reference: &[TokenId]) -> Vec<f64> {
    reference
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            let row: Vec<f64> = logits.row(i).iter().map(|x| x.as_f64()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            row[tok] - max - z.ln()
        })
        .collect()
}

fn reference_prefix<T: Real>(model: &Model<T>, reference: &[TokenId]) -> Result<Vec<TokenId>> {
    if reference.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(&bad) = reference.iter().find(|&&t| t >= model.config().vocab_size) {
        return Err(Error::InvalidInput(format!("reference token {bad} outside the vocabulary")));
    }
    let mut prefix = Vec::with_capacity(reference.len());
    prefix.push(BOS);
    prefix.extend_from_slice(&reference[..reference.len() - 1]);
    Ok(prefix)
}

fn teacher_forced<T: Real>(model: &Model<T>, v: &SemanticVector<T>, reference: &[TokenId], mask: DecoderMask) -> Result<Vec<f64>> {
    let prefix = reference_prefix(model, reference)?;
    let out = model.decode_logits_with(v, &prefix, mask)?;
    Ok(log_probs(&out.logits, reference))
}

/// Log-probability of each reference token given `v` and all preceding
/// reference tokens.
pub fn token_log_probs<T: Real>(model: &Model<T>, v: &SemanticVector<T>, reference: &[TokenId]) -> Result<Vec<f64>> {
    teacher_forced(model, v, reference, DecoderMask::Causal)
}

/// `p_full` per reference position.
pub fn token_probs<T: Real>(model: &Model<T>, v: &SemanticVector<T>, reference: &[TokenId]) -> Result<Vec<f64>> {
    Ok(token_log_probs(model, v, reference)?.into_iter().map(f64::exp).collect())
}

/// Log-probability of each reference token with its preceding context
/// masked: position `i` sees only the start token, its position and `v`.
pub fn masked_log_probs<T: Real>(model: &Model<T>, v: &SemanticVector<T>, reference: &[TokenId]) -> Result<Vec<f64>> {
    teacher_forced(model, v, reference, DecoderMask::ContextMasked)
}

pub fn masked_probs<T: Real>(model: &Model<T>, v: &SemanticVector<T>, reference: &[TokenId]) -> Result<Vec<f64>> {
    Ok(masked_log_probs(model, v, reference)?.into_iter().map(f64::exp).collect())
}

/// `p_rep`: teacher-forced probabilities under a substituted vector.
pub fn replaced_probs<T: Real>(model: &Model<T>, v_alt: &SemanticVector<T>, reference: &[TokenId]) -> Result<Vec<f64>> {
    token_probs(model, v_alt, reference)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDependency {
    pub position: usize,
    pub token_id: TokenId,
    pub p_full: f64,
    pub p_rep: f64,
    pub p_mask: f64,
    pub delta_sem: f64,
    pub delta_ctx: f64,
    /// Part of the gloss text, as opposed to the POS label and its period.
    pub in_gloss: bool,
}

/// Dependencies for every reference position. With several replacement
/// vectors, `delta_sem` is their mean and `p_rep` the matching geometric mean.
pub fn token_dependencies<T: Real>(
    model: &Model<T>,
    v: &SemanticVector<T>,
    replacements: &[SemanticVector<T>],
    reference: &[TokenId],
    gloss_start: usize,
) -> Result<Vec<TokenDependency>> {
    if replacements.is_empty() {
        return Err(Error::InvalidInput("at least one replacement vector is required".into()));
    }
    let full = token_log_probs(model, v, reference)?;
    let masked = masked_log_probs(model, v, reference)?;
    let mut sem = vec![0.0; reference.len()];
    for alt in replacements {
        for (s, (lr, lf)) in sem.iter_mut().zip(token_log_probs(model, alt, reference)?.iter().zip(&full)) {
            *s += lf - lr;
        }
    }
    let k = replacements.len() as f64;
    Ok((0..reference.len())
        .map(|i| {
            let delta_sem = sem[i] / k;
            let delta_ctx = full[i] - masked[i];
            TokenDependency {
                position: i,
                token_id: reference[i],
                p_full: full[i].exp(),
                p_rep: (full[i] - delta_sem).exp(),
                p_mask: masked[i].exp(),
                delta_sem,
                delta_ctx,
                in_gloss: i >= gloss_start,
            }
        })
        .collect())
}

/// A uniformly drawn sense of the same category with a different id.
pub fn sample_replacement<'a, R: Rng + ?Sized>(sense: &Sense, pool: &'a [Sense], rng: &mut R) -> Result<&'a Sense> {
    let candidates: Vec<&Sense> =
        pool.iter().filter(|s| s.category() == sense.category() && s.sense_id != sense.sense_id).collect();
    if candidates.is_empty() {
        return Err(Error::NoCandidate(format!("no other {} sense to replace {}", sense.category(), sense.sense_id)));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// How a sense's vector is pooled from its example sentences.
    pub vector: VectorSource,
    /// Replacement senses averaged per target for `δ_sem`.
    pub replacements: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { vector: VectorSource::MeanOfExamples, replacements: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlossDependency {
    pub sense_id: String,
    pub pos: PosCategory,
    pub mean_delta_sem: f64,
    pub mean_delta_ctx: f64,
    /// Gloss tokens averaged (the POS label and its period are excluded).
    pub n_tokens: usize,
    pub tokens: Vec<TokenDependency>,
}

/// Reference ids and the index where the gloss text begins.
pub fn reference_ids(sense: &Sense, tokenizer: &Tokenizer) -> (Vec<TokenId>, usize) {
    (tokenizer.encode(&target_text(sense)), sense.pos.as_str().chars().count() + 1)
}

pub fn gloss_dependency<T: Real>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    sense: &Sense,
    replacements: &[&Sense],
    options: &AnalysisOptions,
) -> Result<GlossDependency> {
    if sense.gloss.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty gloss", sense.sense_id)));
    }
    let v = sense_vector(model, sense, tokenizer, options.vector)?;
    let alts = replacements
        .iter()
        .map(|r| sense_vector(model, r, tokenizer, options.vector))
        .collect::<Result<Vec<_>>>()?;
    let (reference, gloss_start) = reference_ids(sense, tokenizer);
    let tokens = token_dependencies(model, &v, &alts, &reference, gloss_start)?;
    let body: Vec<&TokenDependency> = tokens.iter().filter(|t| t.in_gloss).collect();
    let sem: Vec<f64> = body.iter().map(|t| t.delta_sem).collect();
    let ctx: Vec<f64> = body.iter().map(|t| t.delta_ctx).collect();
    Ok(GlossDependency {
        sense_id: sense.sense_id.clone(),
        pos: sense.category(),
        mean_delta_sem: mean(&sem).expect("gloss is non-empty"),
        mean_delta_ctx: mean(&ctx).expect("gloss is non-empty"),
        n_tokens: body.len(),
        tokens,
    })
}

/// Gloss dependencies for every sense in `sense_id` order, with replacements
/// drawn from `senses` by a generator seeded with `seed`.
pub fn all_gloss_dependencies<T: Real>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    senses: &[Sense],
    seed: u64,
    options: &AnalysisOptions,
) -> Result<Vec<GlossDependency>> {
    let mut order: Vec<&Sense> = senses.iter().collect();
    order.sort_by(|a, b| a.sense_id.cmp(&b.sense_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = options.replacements.max(1);
    order
        .into_iter()
        .map(|s| {
            let reps = (0..k).map(|_| sample_replacement(s, senses, &mut rng)).collect::<Result<Vec<_>>>()?;
            gloss_dependency(model, tokenizer, s, &reps, options)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosDependencyRow {
    pub pos: PosCategory,
    pub n_glosses: usize,
    pub mean_delta_sem: f64,
    pub se_sem: f64,
    pub mean_delta_ctx: f64,
    pub se_ctx: f64,
}

/// Mean and standard error of gloss-level indices per category (N, V, D, O).
pub fn pos_dependency_rows(glosses: &[GlossDependency]) -> Vec<PosDependencyRow> {
    let mut by: BTreeMap<PosCategory, Vec<&GlossDependency>> = BTreeMap::new();
    for g in glosses {
        by.entry(g.pos).or_default().push(g);
    }
    let mut rows = Vec::new();
    for pos in PosCategory::CONTENT {
        let Some(gs) = by.get(&pos) else {
            log::warn!("no glosses of category {pos}; row omitted");
            continue;
        };
        let sem: Vec<f64> = gs.iter().map(|g| g.mean_delta_sem).collect();
        let ctx: Vec<f64> = gs.iter().map(|g| g.mean_delta_ctx).collect();
        rows.push(PosDependencyRow {
            pos,
            n_glosses: gs.len(),
            mean_delta_sem: mean(&sem).expect("non-empty"),
            se_sem: standard_error(&sem),
            mean_delta_ctx: mean(&ctx).expect("non-empty"),
            se_ctx: standard_error(&ctx),
        });
    }
    rows
}

pub fn pos_dependency_table<T: Real>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    senses: &[Sense],
    seed: u64,
    options: &AnalysisOptions,
) -> Result<Vec<PosDependencyRow>> {
    Ok(pos_dependency_rows(&all_gloss_dependencies(model, tokenizer, senses, seed, options)?))
}

pub fn token_table(glosses: &[GlossDependency], tokenizer: &Tokenizer) -> String {
    let mut out = String::from("sense_id\tposition\ttoken\tin_gloss\tp_full\tp_rep\tp_mask\tdelta_sem\tdelta_ctx\n");
    for g in glosses {
        for t in &g.tokens {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\n",
                g.sense_id,
                t.position,
                tokenizer.decode(&[t.token_id]),
                t.in_gloss,
                t.p_full,
                t.p_rep,
                t.p_mask,
                t.delta_sem,
                t.delta_ctx
            ));
        }
    }
    out
}

pub fn gloss_table(glosses: &[GlossDependency]) -> String {
    let mut out = String::from("sense_id\tpos\tn_tokens\tmean_delta_sem\tmean_delta_ctx\n");
    for g in glosses {
        out.push_str(&format!("{}\t{}\t{}\t{:.6}\t{:.6}\n", g.sense_id, g.pos, g.n_tokens, g.mean_delta_sem, g.mean_delta_ctx));
    }
    out
}

pub fn pos_table(rows: &[PosDependencyRow]) -> String {
    let mut out = String::from("pos\tn_glosses\tmean_delta_sem\tse_sem\tmean_delta_ctx\tse_ctx\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.pos, r.n_glosses, r.mean_delta_sem, r.se_sem, r.mean_delta_ctx, r.se_ctx
        ));
    }
    out
}

#[cfg(test)]
mod tests;
