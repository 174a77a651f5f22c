//! Stage-1 denoising pairs, stage-2 fine-tuning instances and the training
//! loops for both stages.

mod corrupt;

use std::cell::RefCell;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vec2gloss_numerics::{AdamW, AdamWConfig, Real, Tape};

use crate::corpus::{ExampleSentence, Sense, TokenId, Tokenizer};
use crate::model::{Example, Mode, Model, TargetMask};
use crate::{Error, Result};

pub use corrupt::{corrupt, sample_span_length, splice, CorruptionConfig, DenoisePair, Symbol};

pub const PERIOD: char = '。';

/// `pos。gloss。` with exactly one trailing period.
pub fn target_text(sense: &Sense) -> String {
    format!("{}{PERIOD}{}{PERIOD}", sense.pos, sense.gloss.trim_end_matches(PERIOD))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinetuneInstance {
    pub sense_id: String,
    pub input_ids: Vec<TokenId>,
    pub target_mask: TargetMask,
    pub target_ids: Vec<TokenId>,
}

impl FinetuneInstance {
    pub fn example(&self) -> Example<'_> {
        Example { source: &self.input_ids, target_mask: Some(&self.target_mask), target: &self.target_ids }
    }
}

pub fn build_instance(sense: &Sense, example: &ExampleSentence, tokenizer: &Tokenizer) -> Result<FinetuneInstance> {
    example.check(&sense.lemma)?;
    let input_ids = tokenizer.encode(&example.text);
    let target_mask = TargetMask::for_span(input_ids.len(), example.start, example.end)?;
    Ok(FinetuneInstance {
        sense_id: sense.sense_id.clone(),
        input_ids,
        target_mask,
        target_ids: tokenizer.encode(&target_text(sense)),
    })
}

/// One instance per example sentence of every sense.
pub fn build_instances(senses: &[Sense], tokenizer: &Tokenizer) -> Result<Vec<FinetuneInstance>> {
    senses
        .iter()
        .flat_map(|s| s.examples.iter().map(move |e| build_instance(s, e, tokenizer)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Linear decay to zero over the run; constant rate otherwise.
    pub linear_decay: bool,
    /// Draw fresh corruptions every denoising epoch instead of once per run.
    pub recorrupt_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 10,
            base_lr: 1e-4,
            weight_decay: 0.01,
            seed: 0,
            clip_norm: Some(1.0),
            linear_decay: true,
            recorrupt_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn denoise() -> Self {
        Self { epochs: 3, ..Self::default() }
    }

    pub fn finetune() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidInput("batch_size and epochs must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::InvalidInput(format!("bad learning rate {} or weight decay {}", self.base_lr, self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Second corruption spans that found no room.
    pub skipped_spans: usize,
}

impl TrainReport {
    /// First epoch (1-based) whose mean loss is at most `target`.
    pub fn epochs_to_loss(&self, target: f64) -> Option<usize> {
        self.epoch_losses.iter().position(|&l| l <= target).map(|i| i + 1)
    }
}

/// Shared loop: shuffles `0..n` each epoch and steps AdamW on `batch_loss`.
fn run<T: Real>(
    model: &mut Model<T>,
    n: usize,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize) -> Result<()>,
    batch_loss: impl Fn(&Model<T>, &Tape<T>, &[usize], Mode<'_>) -> Result<vec2gloss_numerics::Var>,
) -> Result<TrainReport> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("no training examples".into()));
    }
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total = (steps_per_epoch * config.epochs) as u64;
    let opt_config = AdamWConfig {
        base_lr: config.base_lr,
        weight_decay: config.weight_decay,
        clip_norm: config.clip_norm,
        linear_decay: config.linear_decay,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(opt_config, model.params(), total)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dropout_rng = RefCell::new(ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f));
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        on_epoch(epoch)?;
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let value = {
                let g = Tape::new();
                let loss = batch_loss(model, &g, batch, Mode::Train(&dropout_rng))?;
                let value = g.value(loss).data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch: epoch + 1, step, detail: format!("loss {value} on batch {batch:?}") });
                }
                g.backward(loss, model.params_mut())?;
                value
            };
            let lr = opt.current_lr()?;
            opt.step(model.params_mut())?;
            step += 1;
            sum += value;
            log::debug!("step {step} epoch {} lr {lr:.3e} loss {value:.5}", epoch + 1);
            report.log.push(LogRecord { step, epoch: epoch + 1, lr, loss: value });
        }
        report.epoch_losses.push(sum / steps_per_epoch as f64);
    }
    Ok(report)
}

/// Stage 1: seq2seq span reconstruction over glosses, without the bottleneck.
pub fn train_denoise<T: Real>(
    model: &mut Model<T>,
    glosses: &[String],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
    corruption: &CorruptionConfig,
) -> Result<TrainReport> {
    corruption.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    let pairs = RefCell::new(Vec::<(Vec<TokenId>, Vec<TokenId>)>::new());
    let skipped = RefCell::new(0usize);
    let make = |rng: &mut ChaCha8Rng| -> Result<()> {
        let mut out = Vec::with_capacity(glosses.len());
        for g in glosses {
            let p = corrupt(g, rng, corruption)?;
            if p.skipped_span {
                *skipped.borrow_mut() += 1;
            }
            out.push((p.input_ids(tokenizer), p.target_ids(tokenizer)));
        }
        *pairs.borrow_mut() = out;
        Ok(())
    };
    let mut report = run(
        model,
        glosses.len(),
        config,
        |epoch| if epoch == 0 || config.recorrupt_each_epoch { make(&mut rng) } else { Ok(()) },
        |m, g, batch, mode| {
            let pairs = pairs.borrow();
            let examples: Vec<Example<'_>> = batch
                .iter()
                .map(|&i| Example { source: &pairs[i].0, target_mask: None, target: &pairs[i].1 })
                .collect();
            m.loss(g, &examples, mode)
        },
    )?;
    report.skipped_spans = skipped.into_inner();
    if report.skipped_spans > 0 {
        log::info!("{} second spans skipped for lack of room", report.skipped_spans);
    }
    Ok(report)
}

/// Which forward the fine-tuning stage trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Decoder conditioned on the pooled target vector only.
    Bottleneck,
    /// Control: decoder cross-attends to every encoder state.
    FullAttention,
}

fn examples_for<'a>(instances: &'a [FinetuneInstance], idx: &[usize], objective: Objective) -> Vec<Example<'a>> {
    idx.iter()
        .map(|&i| {
            let mut e = instances[i].example();
            if objective == Objective::FullAttention {
                e.target_mask = None;
            }
            e
        })
        .collect()
}

/// Stage 2: gloss generation from the semantic vector, teacher forced.
pub fn train_finetune<T: Real>(model: &mut Model<T>, instances: &[FinetuneInstance], config: &TrainConfig) -> Result<TrainReport> {
    train_finetune_with(model, instances, config, Objective::Bottleneck)
}

pub fn train_finetune_with<T: Real>(
    model: &mut Model<T>,
    instances: &[FinetuneInstance],
    config: &TrainConfig,
    objective: Objective,
) -> Result<TrainReport> {
    run(model, instances.len(), config, |_| Ok(()), |m, g, batch, mode| {
        m.loss(g, &examples_for(instances, batch, objective), mode)
    })
}

/// Token-weighted mean cross-entropy in eval mode.
pub fn eval_loss<T: Real>(model: &Model<T>, instances: &[FinetuneInstance], objective: Objective, batch_size: usize) -> Result<f64> {
    if instances.is_empty() || batch_size == 0 {
        return Err(Error::InvalidInput("eval_loss needs instances and a positive batch size".into()));
    }
    let idx: Vec<usize> = (0..instances.len()).collect();
    let (mut total, mut tokens) = (0.0, 0usize);
    for batch in idx.chunks(batch_size) {
        let g = Tape::new();
        let examples = examples_for(instances, batch, objective);
        let n = examples.iter().map(|e| e.target.len() + 1).sum::<usize>();
        let loss = model.loss(&g, &examples, Mode::Eval)?;
        total += g.value(loss).data()[0].as_f64() * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub bottleneck_eval_loss: f64,
    pub control_eval_loss: f64,
    pub bottleneck: TrainReport,
    pub control: TrainReport,
}

/// Fine-tune copies of `base` with and without the bottleneck and compare
/// held-out losses under each model's own objective.
pub fn ablation<T: Real>(
    base: &Model<T>,
    train: &[FinetuneInstance],
    eval: &[FinetuneInstance],
    config: &TrainConfig,
) -> Result<AblationReport> {
    let mut with = base.clone();
    let bottleneck = train_finetune_with(&mut with, train, config, Objective::Bottleneck)?;
    let mut without = base.clone();
    let control = train_finetune_with(&mut without, train, config, Objective::FullAttention)?;
    Ok(AblationReport {
        bottleneck_eval_loss: eval_loss(&with, eval, Objective::Bottleneck, config.batch_size)?,
        control_eval_loss: eval_loss(&without, eval, Objective::FullAttention, config.batch_size)?,
        bottleneck,
        control,
    })
}

#[cfg(test)]
mod tests;
