use std::sync::Arc;

use rand::Rng;
use vec2gloss_numerics::{Array, Real, Tape, Var};

use super::{Attention, DecoderMask, Ffn, Mode, Model, Norm};
use crate::corpus::{TokenId, PAD};
use crate::{Error, Result};

/// Encoder output on a tape: `states` is `[batch, seq_len, d_model]` and
/// `padding[b * seq_len + t]` marks padded positions.
pub struct EncodedBatch {
    pub states: Var,
    pub padding: Vec<bool>,
    pub seq_len: usize,
}

/// Decoder output on a tape: `logits` is `[batch, tgt_len, vocab]`; attention
/// weights are `[batch * n_heads, tgt_len, keys]` per layer.
pub struct DecodedBatch {
    pub logits: Var,
    pub cross_attention: Vec<Var>,
    pub self_attention: Vec<Var>,
    pub tgt_len: usize,
}

fn pad_batch(seqs: &[&[TokenId]]) -> (Vec<TokenId>, Vec<bool>, usize) {
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(seqs.len() * len);
    let mut pad = Vec::with_capacity(seqs.len() * len);
    for s in seqs {
        ids.extend_from_slice(s);
        ids.extend(std::iter::repeat_n(PAD, len - s.len()));
        pad.extend(std::iter::repeat_n(false, s.len()));
        pad.extend(std::iter::repeat_n(true, len - s.len()));
    }
    (ids, pad, len)
}

impl<T: Real> Model<T> {
    fn dropout(&self, g: &Tape<T>, x: Var, mode: Mode<'_>) -> Result<Var> {
        let p = self.config.dropout;
        match mode {
            Mode::Train(rng) if p > 0.0 => {
                let shape = g.shape(x);
                let n: usize = shape.iter().product();
                let keep = T::of(1.0 / (1.0 - p));
                let mut rng = rng.borrow_mut();
                let mask = (0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
                Ok(g.mul_const(x, Array::new(shape, mask)?)?)
            }
            _ => Ok(x),
        }
    }

    fn norm(&self, g: &Tape<T>, x: Var, n: &Norm) -> Result<Var> {
        let gamma = g.param(&self.params, n.gamma);
        let beta = g.param(&self.params, n.beta);
        Ok(g.layer_norm(x, gamma, beta, self.config.layer_norm_eps)?)
    }

    fn split_heads(&self, g: &Tape<T>, x: Var, b: usize, t: usize) -> Result<Var> {
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let x = g.reshape(x, &[b, t, h, dh])?;
        let x = g.swap_axes12(x)?;
        Ok(g.reshape(x, &[b * h, t, dh])?)
    }

    /// Multi-head attention of `xq[b, tq, d]` over `xkv[b, tk, d]`.
    /// `masked[(b·h + head)·tq·tk + i·tk + j]` hides key `j` from query `i`.
    /// Returns the projected output and the attention weights.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &Tape<T>,
        xq: Var,
        xkv: Var,
        p: &Attention,
        masked: Arc<Vec<bool>>,
        b: usize,
        tq: usize,
        tk: usize,
    ) -> Result<(Var, Var)> {
        let (d, h) = (self.config.d_model, self.config.n_heads);
        let dh = d / h;
        let param = |id| g.param(&self.params, id);
        let q = self.split_heads(g, g.matmul(xq, param(p.q), false)?, b, tq)?;
        let k = self.split_heads(g, g.matmul(xkv, param(p.k), false)?, b, tk)?;
        let v = self.split_heads(g, g.matmul(xkv, param(p.v), false)?, b, tk)?;
        let scores = g.scale(g.batch_matmul(q, k, true)?, T::of(1.0 / (dh as f64).sqrt()));
        let probs = g.softmax(g.masked_fill(scores, masked)?);
        let ctx = g.batch_matmul(probs, v, false)?;
        let ctx = g.reshape(ctx, &[b, h, tq, dh])?;
        let ctx = g.reshape(g.swap_axes12(ctx)?, &[b, tq, d])?;
        Ok((g.matmul(ctx, param(p.o), false)?, probs))
    }

    fn ffn(&self, g: &Tape<T>, x: Var, p: &Ffn) -> Result<Var> {
        let param = |id| g.param(&self.params, id);
        let hidden = g.gelu(g.add_broadcast(g.matmul(x, param(p.w1), false)?, param(p.b1))?);
        Ok(g.add_broadcast(g.matmul(hidden, param(p.w2), false)?, param(p.b2))?)
    }

    /// Attention masks replicated over heads; `hide(b, i, j)` is per example.
    fn head_mask(&self, b: usize, tq: usize, tk: usize, hide: impl Fn(usize, usize, usize) -> bool) -> Arc<Vec<bool>> {
        let h = self.config.n_heads;
        let mut m = Vec::with_capacity(b * h * tq * tk);
        for bi in 0..b {
            let mut one = Vec::with_capacity(tq * tk);
            for i in 0..tq {
                for j in 0..tk {
                    one.push(hide(bi, i, j));
                }
            }
            for _ in 0..h {
                m.extend_from_slice(&one);
            }
        }
        Arc::new(m)
    }

    fn embed(&self, g: &Tape<T>, ids: &[TokenId], positions: super::ParamId, b: usize, t: usize) -> Result<(Var, Var)> {
        let tok = g.embedding(g.param(&self.params, self.layout.tokens), ids)?;
        let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pos = g.embedding(g.param(&self.params, positions), &pos_ids)?;
        Ok((tok, pos))
    }

    /// Encoder forward over a padded batch of sentences.
    pub fn encode_graph(&self, g: &Tape<T>, sources: &[&[TokenId]], mode: Mode<'_>) -> Result<EncodedBatch> {
        if sources.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in sources {
            self.check_ids(s)?;
        }
        let (ids, padding, s) = pad_batch(sources);
        let b = sources.len();
        let d = self.config.d_model;
        let (tok, pos) = self.embed(g, &ids, self.layout.enc_pos, b, s)?;
        let x = g.reshape(g.add(tok, pos)?, &[b, s, d])?;
        let mut x = self.dropout(g, x, mode)?;
        let mask = self.head_mask(b, s, s, |bi, _, j| padding[bi * s + j]);
        for layer in &self.layout.encoder {
            let h = self.norm(g, x, &layer.attn_norm)?;
            let (a, _) = self.attention(g, h, h, &layer.attn, mask.clone(), b, s, s)?;
            x = g.add(x, self.dropout(g, a, mode)?)?;
            let h = self.norm(g, x, &layer.ffn_norm)?;
            let f = self.ffn(g, h, &layer.ffn)?;
            x = g.add(x, self.dropout(g, f, mode)?)?;
        }
        let states = self.norm(g, x, &self.layout.enc_norm)?;
        Ok(EncodedBatch { states, padding, seq_len: s })
    }

    /// Decoder forward over `memory[b, m, d]` for a padded batch of prefixes.
    pub fn decode_graph(
        &self,
        g: &Tape<T>,
        memory: Var,
        memory_padding: &[bool],
        prefixes: &[&[TokenId]],
        dmask: DecoderMask,
        mode: Mode<'_>,
    ) -> Result<DecodedBatch> {
        let ms = g.shape(memory);
        let b = prefixes.len();
        let d = self.config.d_model;
        if ms.len() != 3 || ms[0] != b || ms[2] != d || memory_padding.len() != ms[0] * ms[1] {
            return Err(Error::InvalidInput(format!("memory {ms:?} for {b} prefixes")));
        }
        let m = ms[1];
        for p in prefixes {
            self.check_ids(p)?;
        }
        let (ids, padding, t) = pad_batch(prefixes);
        let (mut tok, pos) = self.embed(g, &ids, self.layout.dec_pos, b, t)?;
        if dmask == DecoderMask::ContextMasked {
            let keep: Vec<T> = (0..b * t)
                .flat_map(|r| std::iter::repeat_n(if r % t == 0 { T::one() } else { T::zero() }, d))
                .collect();
            tok = g.mul_const(tok, Array::new(vec![b * t, d], keep)?)?;
        }
        let x = g.reshape(g.add(tok, pos)?, &[b, t, d])?;
        let mut x = self.dropout(g, x, mode)?;
        let self_mask = self.head_mask(b, t, t, |bi, i, j| {
            padding[bi * t + j]
                || match dmask {
                    DecoderMask::Causal => j > i,
                    DecoderMask::ContextMasked => j != 0 && j != i,
                }
        });
        let cross_mask = self.head_mask(b, t, m, |bi, _, j| memory_padding[bi * m + j]);
        let mut cross_attention = Vec::new();
        let mut self_attention = Vec::new();
        for layer in &self.layout.decoder {
            let h = self.norm(g, x, &layer.self_norm)?;
            let (a, w) = self.attention(g, h, h, &layer.self_attn, self_mask.clone(), b, t, t)?;
            self_attention.push(w);
            x = g.add(x, self.dropout(g, a, mode)?)?;
            let h = self.norm(g, x, &layer.cross_norm)?;
            let (c, w) = self.attention(g, h, memory, &layer.cross_attn, cross_mask.clone(), b, t, m)?;
            cross_attention.push(w);
            x = g.add(x, self.dropout(g, c, mode)?)?;
            let h = self.norm(g, x, &layer.ffn_norm)?;
            let f = self.ffn(g, h, &layer.ffn)?;
            x = g.add(x, self.dropout(g, f, mode)?)?;
        }
        let h = self.norm(g, x, &self.layout.dec_norm)?;
        let logits = match self.layout.lm_head {
            Some(w) => g.matmul(h, g.param(&self.params, w), false)?,
            None => g.matmul(h, g.param(&self.params, self.layout.tokens), true)?,
        };
        Ok(DecodedBatch { logits, cross_attention, self_attention, tgt_len: t })
    }
}
