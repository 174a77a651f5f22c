//! Encoder-decoder transformer with a single-vector bottleneck.
//!
//! The encoder contextualizes a sentence; the states of the target word's
//! characters are averaged into one [`SemanticVector`], and every decoder
//! cross-attention layer attends to a memory of length one holding exactly
//! that vector. The same parameters also run as an ordinary seq2seq model
//! (cross-attention over all encoder states) for the denoising stage.
//!
//! Layers are pre-norm; positions are learned absolute embeddings, separate
//! for encoder and decoder; the length-one memory carries no position.
//!
//! Parameter count, with `V` vocab, `D` d_model, `F` d_ffn, `L` max_len,
//! `E`/`R` encoder/decoder layers:
//!
//! ```text
//! V·D + 2·L·D
//!   + E·(4·D² + 2·D·F + F + 5·D) + 2·D
//!   + R·(8·D² + 2·D·F + F + 7·D) + 2·D
//!   + (tie_embeddings ? 0 : D·V)
//! ```

mod layers;

use std::cell::RefCell;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vec2gloss_numerics::{init, Array, ParamId, ParamStore, Real, Tape, Var};

use crate::corpus::{TokenId, BOS, EOS};
use crate::{Error, Result};

pub use layers::{DecodedBatch, EncodedBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub tie_embeddings: bool,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ffn: 256,
            max_len: 128,
            dropout: 0.1,
            tie_embeddings: true,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.vocab_size, self.d_model, self.n_heads, self.d_ffn, self.max_len];
        if positive.contains(&0) || self.n_encoder_layers == 0 || self.n_decoder_layers == 0 {
            return Err(Error::InvalidInput(format!("model dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidInput(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Analytic parameter count (see the module docs).
    pub fn parameter_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ffn, self.max_len);
        let enc = 4 * d * d + 2 * d * f + f + 5 * d;
        let dec = 8 * d * d + 2 * d * f + f + 7 * d;
        v * d + 2 * l * d + self.n_encoder_layers * enc + 2 * d + self.n_decoder_layers * dec + 2 * d
            + if self.tie_embeddings { 0 } else { d * v }
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Attention {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Clone, Debug)]
struct Ffn {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn_norm: Norm,
    attn: Attention,
    ffn_norm: Norm,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_norm: Norm,
    self_attn: Attention,
    cross_norm: Norm,
    cross_attn: Attention,
    ffn_norm: Norm,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct Layout {
    tokens: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    lm_head: Option<ParamId>,
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Forward-pass mode. Dropout is active only in `Train`.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a RefCell<ChaCha8Rng>),
}

/// Decoder self-attention pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderMask {
    /// Standard causal attention over the prefix.
    Causal,
    /// Each position sees only the start token and itself, and positions after
    /// the start token carry no token embedding: position `i` is conditioned on
    /// the memory, the start token and its position only.
    ContextMasked,
}

/// Per-token encoder states of one sentence, `[seq_len, d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStates<T> {
    pub states: Array<T>,
}

impl<T: Real> EncoderStates<T> {
    pub fn seq_len(&self) -> usize {
        self.states.shape()[0]
    }
}

/// Selection of target-word positions within an input sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetMask(Vec<bool>);

impl TargetMask {
    /// Requires at least one selected position, all of them contiguous.
    pub fn new(mask: Vec<bool>) -> Result<Self> {
        let first = mask.iter().position(|&m| m).ok_or_else(|| Error::InvalidMask("no position selected".into()))?;
        let last = mask.iter().rposition(|&m| m).expect("has a true entry");
        if mask[first..=last].iter().any(|&m| !m) {
            return Err(Error::InvalidMask("selected positions are not contiguous".into()));
        }
        Ok(Self(mask))
    }

    pub fn for_span(len: usize, start: usize, end: usize) -> Result<Self> {
        if !(start < end && end <= len) {
            return Err(Error::InvalidMask(format!("span {start}..{end} outside a sequence of {len}")));
        }
        Self::new((0..len).map(|i| (start..end).contains(&i)).collect())
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn selected(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }
}

/// The pooled target-word vector the decoder is conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticVector<T>(Array<T>);

impl<T: Real> SemanticVector<T> {
    pub fn new(v: Array<T>) -> Result<Self> {
        if v.shape().len() != 1 || !v.all_finite() {
            return Err(Error::InvalidInput(format!("semantic vector must be a finite 1-d array, got {:?}", v.shape())));
        }
        Ok(Self(v))
    }

    pub fn zeros(d_model: usize) -> Self {
        Self(Array::zeros(&[d_model]))
    }

    pub fn array(&self) -> &Array<T> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Elementwise mean of several vectors. The inputs are summed in a
    /// canonical order, so the result does not depend on their order.
    pub fn mean(vectors: &[SemanticVector<T>]) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| Error::InvalidInput("mean of no vectors".into()))?;
        let d = first.dim();
        if vectors.iter().any(|v| v.dim() != d) {
            return Err(Error::InvalidInput("semantic vectors differ in dimension".into()));
        }
        let mut sorted: Vec<&SemanticVector<T>> = vectors.iter().collect();
        sorted.sort_by(|a, b| {
            let key = |v: &SemanticVector<T>| v.0.data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
            key(a).iter().zip(&key(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut acc = vec![T::zero(); d];
        for v in sorted {
            for (a, &x) in acc.iter_mut().zip(v.0.data()) {
                *a += x;
            }
        }
        let n = T::of(vectors.len() as f64);
        Self::new(Array::from_vec(acc.into_iter().map(|a| a / n).collect()))
    }
}

/// Next-token logits per decoder position, `[tgt_len, vocab_size]`.
#[derive(Clone, Debug)]
pub struct DecoderOutput<T> {
    pub logits: Array<T>,
    /// Cross-attention weights per decoder layer, `[n_heads, tgt_len, memory_len]`.
    pub cross_attention: Vec<Arc<Array<T>>>,
    /// Self-attention weights per decoder layer, `[n_heads, tgt_len, tgt_len]`.
    pub self_attention: Vec<Arc<Array<T>>>,
}

impl<T: Real> DecoderOutput<T> {
    pub fn len(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    /// Generated ids, without the start token and without the end token.
    pub ids: Vec<TokenId>,
    /// The budget ran out before an end token was produced.
    pub truncated: bool,
}

/// One training example for the seq2seq or bottleneck objective. `target`
/// excludes the start and end tokens; the loss appends the end token.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub source: &'a [TokenId],
    pub target_mask: Option<&'a TargetMask>,
    pub target: &'a [TokenId],
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Model<T> {
    /// Fresh model with truncated-normal weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        Self::build(config, |_, shape, kind| {
            Ok(match kind {
                Init::Normal => init::truncated_normal(shape, std, &mut rng),
                Init::Zeros => Array::zeros(shape),
                Init::Ones => Array::full(shape, T::one()),
            })
        })
    }

    /// Model from named arrays, e.g. a checkpoint. Every expected parameter
    /// must be present with the expected shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Array<T>)>) -> Result<Self> {
        let mut named: std::collections::HashMap<String, Array<T>> = named.into_iter().collect();
        let model = Self::build(config, |name, shape, _| {
            let a = named
                .remove(name)
                .ok_or_else(|| Error::InvalidInput(format!("missing parameter {name}")))?;
            if a.shape() != shape {
                return Err(Error::InvalidInput(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    a.shape()
                )));
            }
            Ok(a)
        })?;
        if let Some(extra) = named.keys().next() {
            return Err(Error::InvalidInput(format!("unexpected parameter {extra}")));
        }
        Ok(model)
    }

    fn build(config: ModelConfig, mut make: impl FnMut(&str, &[usize], Init) -> Result<Array<T>>) -> Result<Self> {
        config.validate()?;
        let (v, d, f, l) = (config.vocab_size, config.d_model, config.d_ffn, config.max_len);
        let mut store = ParamStore::new();
        let mut add = |name: String, shape: &[usize], kind: Init| -> Result<ParamId> {
            let a = make(&name, shape, kind)?;
            Ok(store.add(name, a)?)
        };
        let norm = |add: &mut dyn FnMut(String, &[usize], Init) -> Result<ParamId>, p: &str| -> Result<Norm> {
            Ok(Norm { gamma: add(format!("{p}.gamma"), &[d], Init::Ones)?, beta: add(format!("{p}.beta"), &[d], Init::Zeros)? })
        };
        let attention = |add: &mut dyn FnMut(String, &[usize], Init) -> Result<ParamId>, p: &str| -> Result<Attention> {
            Ok(Attention {
                q: add(format!("{p}.q"), &[d, d], Init::Normal)?,
                k: add(format!("{p}.k"), &[d, d], Init::Normal)?,
                v: add(format!("{p}.v"), &[d, d], Init::Normal)?,
                o: add(format!("{p}.o"), &[d, d], Init::Normal)?,
            })
        };
        let ffn = |add: &mut dyn FnMut(String, &[usize], Init) -> Result<ParamId>, p: &str| -> Result<Ffn> {
            Ok(Ffn {
                w1: add(format!("{p}.w1"), &[d, f], Init::Normal)?,
                b1: add(format!("{p}.b1"), &[f], Init::Zeros)?,
                w2: add(format!("{p}.w2"), &[f, d], Init::Normal)?,
                b2: add(format!("{p}.b2"), &[d], Init::Zeros)?,
            })
        };
        let tokens = add("embed.tokens".into(), &[v, d], Init::Normal)?;
        let enc_pos = add("encoder.positions".into(), &[l, d], Init::Normal)?;
        let dec_pos = add("decoder.positions".into(), &[l, d], Init::Normal)?;
        let mut encoder = Vec::new();
        for i in 0..config.n_encoder_layers {
            let p = format!("encoder.layers.{i}");
            encoder.push(EncoderLayer {
                attn_norm: norm(&mut add, &format!("{p}.attn_norm"))?,
                attn: attention(&mut add, &format!("{p}.attn"))?,
                ffn_norm: norm(&mut add, &format!("{p}.ffn_norm"))?,
                ffn: ffn(&mut add, &format!("{p}.ffn"))?,
            });
        }
        let enc_norm = norm(&mut add, "encoder.final_norm")?;
        let mut decoder = Vec::new();
        for i in 0..config.n_decoder_layers {
            let p = format!("decoder.layers.{i}");
            decoder.push(DecoderLayer {
                self_norm: norm(&mut add, &format!("{p}.self_norm"))?,
                self_attn: attention(&mut add, &format!("{p}.self_attn"))?,
                cross_norm: norm(&mut add, &format!("{p}.cross_norm"))?,
                cross_attn: attention(&mut add, &format!("{p}.cross_attn"))?,
                ffn_norm: norm(&mut add, &format!("{p}.ffn_norm"))?,
                ffn: ffn(&mut add, &format!("{p}.ffn"))?,
            });
        }
        let dec_norm = norm(&mut add, "decoder.final_norm")?;
        let lm_head = if config.tie_embeddings { None } else { Some(add("lm_head".into(), &[d, v], Init::Normal)?) };
        let layout = Layout { tokens, enc_pos, dec_pos, encoder, enc_norm, decoder, dec_norm, lm_head };
        Ok(Self { config, params: store, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// The same model at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if ids.len() > self.config.max_len {
            return Err(Error::SequenceTooLong { len: ids.len(), max: self.config.max_len });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    fn check_prefix(&self, prefix: &[TokenId]) -> Result<()> {
        self.check_ids(prefix)?;
        if prefix[0] != BOS {
            return Err(Error::InvalidInput("decoder prefix must begin with the start token".into()));
        }
        Ok(())
    }

    /// Contextual states for one sentence (eval mode).
    pub fn encode(&self, ids: &[TokenId]) -> Result<EncoderStates<T>> {
        let g = Tape::new();
        let enc = self.encode_graph(&g, &[ids], Mode::Eval)?;
        let states = (*g.value(enc.states)).clone().reshaped(&[ids.len(), self.config.d_model])?;
        Ok(EncoderStates { states })
    }

    /// Mean of the state rows selected by `mask`.
    pub fn pool_target(&self, states: &EncoderStates<T>, mask: &TargetMask) -> Result<SemanticVector<T>> {
        let n = states.seq_len();
        if mask.len() != n {
            return Err(Error::InvalidMask(format!("mask of {} for {n} states", mask.len())));
        }
        let g = Tape::new();
        let s = g.constant(states.states.clone().reshaped(&[1, n, self.config.d_model])?);
        let pooled = g.masked_mean(s, Arc::new(mask.as_slice().to_vec()))?;
        SemanticVector::new((*g.value(pooled)).clone().reshaped(&[self.config.d_model])?)
    }

    /// Encode `ids`, pool the target, return the semantic vector.
    pub fn semantic_vector(&self, ids: &[TokenId], mask: &TargetMask) -> Result<SemanticVector<T>> {
        self.pool_target(&self.encode(ids)?, mask)
    }

    fn memory_from_vector(&self, g: &Tape<T>, v: &SemanticVector<T>) -> Result<Var> {
        if v.dim() != self.config.d_model {
            return Err(Error::InvalidInput(format!(
                "semantic vector of dimension {} for d_model {}",
                v.dim(),
                self.config.d_model
            )));
        }
        Ok(g.constant(v.0.clone().reshaped(&[1, 1, self.config.d_model])?))
    }

    fn decoder_output(&self, g: &Tape<T>, dec: &DecodedBatch, len: usize) -> Result<DecoderOutput<T>> {
        let logits = (*g.value(dec.logits)).clone().reshaped(&[len, self.config.vocab_size])?;
        Ok(DecoderOutput {
            logits,
            cross_attention: dec.cross_attention.iter().map(|&v| g.value(v)).collect(),
            self_attention: dec.self_attention.iter().map(|&v| g.value(v)).collect(),
        })
    }

    /// Next-token logits given only the semantic vector and a decoder prefix.
    pub fn decode_logits(&self, v: &SemanticVector<T>, prefix: &[TokenId]) -> Result<DecoderOutput<T>> {
        self.decode_logits_with(v, prefix, DecoderMask::Causal)
    }

    pub fn decode_logits_with(&self, v: &SemanticVector<T>, prefix: &[TokenId], mask: DecoderMask) -> Result<DecoderOutput<T>> {
        self.check_prefix(prefix)?;
        let g = Tape::new();
        let memory = self.memory_from_vector(&g, v)?;
        let dec = self.decode_graph(&g, memory, &[false], &[prefix], mask, Mode::Eval)?;
        self.decoder_output(&g, &dec, prefix.len())
    }

    /// Fused bottleneck forward: encode, pool and decode on one tape.
    pub fn bottleneck_logits(&self, src: &[TokenId], mask: &TargetMask, prefix: &[TokenId]) -> Result<DecoderOutput<T>> {
        self.check_prefix(prefix)?;
        if mask.len() != src.len() {
            return Err(Error::InvalidMask(format!("mask of {} for {} tokens", mask.len(), src.len())));
        }
        let g = Tape::new();
        let enc = self.encode_graph(&g, &[src], Mode::Eval)?;
        let pooled = g.masked_mean(enc.states, Arc::new(mask.as_slice().to_vec()))?;
        let memory = g.reshape(pooled, &[1, 1, self.config.d_model])?;
        let dec = self.decode_graph(&g, memory, &[false], &[prefix], DecoderMask::Causal, Mode::Eval)?;
        self.decoder_output(&g, &dec, prefix.len())
    }

    /// Standard encoder-decoder forward with cross-attention over all states.
    pub fn seq2seq_logits(&self, src: &[TokenId], prefix: &[TokenId]) -> Result<DecoderOutput<T>> {
        self.check_prefix(prefix)?;
        let g = Tape::new();
        let enc = self.encode_graph(&g, &[src], Mode::Eval)?;
        let dec = self.decode_graph(&g, enc.states, &enc.padding, &[prefix], DecoderMask::Causal, Mode::Eval)?;
        self.decoder_output(&g, &dec, prefix.len())
    }

    /// Greedy decoding from the start token until the end token or the budget.
    pub fn generate(&self, v: &SemanticVector<T>, max_new_tokens: usize) -> Result<Generation> {
        if max_new_tokens == 0 {
            return Err(Error::InvalidInput("max_new_tokens must be at least 1".into()));
        }
        let budget = max_new_tokens.min(self.config.max_len - 1).max(1);
        let mut prefix = vec![BOS];
        for _ in 0..budget {
            let out = self.decode_logits(v, &prefix)?;
            let last = out.logits.row(out.len() - 1);
            let next = argmax(last);
            if next == EOS {
                return Ok(Generation { ids: prefix[1..].to_vec(), truncated: false });
            }
            prefix.push(next);
            if prefix.len() >= self.config.max_len {
                break;
            }
        }
        Ok(Generation { ids: prefix[1..].to_vec(), truncated: true })
    }

    /// Mean token cross-entropy of a batch under teacher forcing.
    ///
    /// Examples carrying a target mask train the bottleneck; examples without
    /// one train the plain seq2seq path. A batch must not mix the two.
    pub fn loss(&self, g: &Tape<T>, batch: &[Example<'_>], mode: Mode<'_>) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let bottleneck = batch[0].target_mask.is_some();
        if batch.iter().any(|e| e.target_mask.is_some() != bottleneck) {
            return Err(Error::InvalidInput("batch mixes bottleneck and seq2seq examples".into()));
        }
        let sources: Vec<&[TokenId]> = batch.iter().map(|e| e.source).collect();
        let enc = self.encode_graph(g, &sources, mode)?;
        let (memory, memory_pad) = if bottleneck {
            let s = enc.seq_len;
            let mut mask = Vec::with_capacity(batch.len() * s);
            for e in batch {
                let m = e.target_mask.expect("checked above");
                if m.len() != e.source.len() {
                    return Err(Error::InvalidMask(format!("mask of {} for {} tokens", m.len(), e.source.len())));
                }
                mask.extend_from_slice(m.as_slice());
                mask.extend(std::iter::repeat_n(false, s - m.len()));
            }
            let pooled = g.masked_mean(enc.states, Arc::new(mask))?;
            (g.reshape(pooled, &[batch.len(), 1, self.config.d_model])?, vec![false; batch.len()])
        } else {
            (enc.states, enc.padding.clone())
        };
        let mut inputs = Vec::with_capacity(batch.len());
        let mut labels_per = Vec::with_capacity(batch.len());
        for e in batch {
            let mut inp = Vec::with_capacity(e.target.len() + 1);
            inp.push(BOS);
            inp.extend_from_slice(e.target);
            let mut lab = e.target.to_vec();
            lab.push(EOS);
            inputs.push(inp);
            labels_per.push(lab);
        }
        let refs: Vec<&[TokenId]> = inputs.iter().map(Vec::as_slice).collect();
        let dec = self.decode_graph(g, memory, &memory_pad, &refs, DecoderMask::Causal, mode)?;
        let t = dec.tgt_len;
        let mut labels = Vec::with_capacity(batch.len() * t);
        for lab in &labels_per {
            labels.extend(lab.iter().map(|&l| Some(l)));
            labels.extend(std::iter::repeat_n(None, t - lab.len()));
        }
        Ok(g.cross_entropy(dec.logits, &labels)?)
    }
}

/// Index of the first maximum.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
