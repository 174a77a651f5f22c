//! Run configuration: a TOML file with one table per module, then
//! `section.key=value` overrides. Later sources win: built-in defaults, the
//! file, `--set` flags, then subcommand flags.
//!
//! A `*.manifest.json` written by an earlier run is also accepted as the
//! config file; its `config` object replaces the defaults wholesale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use vec2gloss::analysis::AnalysisOptions;
use vec2gloss::corpus::synth::SynthSpec;
use vec2gloss::corpus::PosCategory;
use vec2gloss::metrics::{EvalOptions, VectorSource};
use vec2gloss::model::ModelConfig;
use vec2gloss::pipeline::{CorruptionConfig, Objective, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub mode: ModeSection,
    pub model: ModelSection,
    pub denoise: TrainConfig,
    pub finetune: TrainConfig,
    pub corruption: CorruptionConfig,
    pub synth: SynthSection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
    pub ratings: RatingSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Sense file read by every stage after `synth`.
    pub corpus: PathBuf,
    /// Starting point of `finetune`, written by `denoise`.
    pub denoised: PathBuf,
    /// Trained model read by `generate`, `eval`, `deps`, `chunks`, `ratings`.
    pub checkpoint: PathBuf,
    /// Chunk annotations read by `chunks`.
    pub annotations: PathBuf,
    /// Directory receiving all outputs.
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSection {
    /// Fine-tune a freshly initialized model instead of `paths.denoised`.
    pub from_scratch: bool,
    pub objective: Objective,
}

/// [`ModelConfig`] minus the vocabulary size, which the corpus fixes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub init_seed: u64,
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub seed: u64,
    pub n_senses: usize,
    pub min_examples: usize,
    pub max_examples: usize,
    /// Category proportions keyed by `N`, `V`, `D`, `O`, `Nb`.
    pub pos_mix: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Fraction of senses held out; 0 trains and evaluates on everything.
    pub eval_fraction: f64,
    pub split_seed: u64,
    pub split: Split,
    pub vector: VectorSource,
    pub max_new_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSection {
    pub split: Split,
    /// Seed of the replacement-sense draw.
    pub seed: u64,
    pub replacements: usize,
    pub vector: VectorSource,
    /// Semantic types annotated on fewer chunks are dropped.
    pub min_chunk_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingSection {
    pub split: Split,
    pub n_items: usize,
    pub seed: u64,
    /// Mix generated definitions into the sheet (needs `paths.checkpoint`).
    pub with_generated: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        let spec = SynthSpec::new(0, 500);
        let out = PathBuf::from("runs");
        Self {
            paths: Paths {
                corpus: out.join("senses.tsv"),
                denoised: out.join("denoise.ckpt"),
                checkpoint: out.join("finetune.ckpt"),
                annotations: out.join("annotations.tsv"),
                output: out,
            },
            mode: ModeSection { from_scratch: false, objective: Objective::Bottleneck },
            model: ModelSection {
                init_seed: 0,
                d_model: m.d_model,
                n_heads: m.n_heads,
                n_encoder_layers: m.n_encoder_layers,
                n_decoder_layers: m.n_decoder_layers,
                d_ffn: m.d_ffn,
                max_len: 64,
                dropout: 0.0,
                tie_embeddings: m.tie_embeddings,
                init_std: m.init_std,
                layer_norm_eps: m.layer_norm_eps,
            },
            denoise: TrainConfig::denoise(),
            finetune: TrainConfig::finetune(),
            corruption: CorruptionConfig::default(),
            synth: SynthSection {
                seed: spec.seed,
                n_senses: spec.n_senses,
                min_examples: spec.min_examples,
                max_examples: spec.max_examples,
                pos_mix: spec.pos_mix.iter().map(|(c, p)| (c.to_string(), *p)).collect(),
            },
            eval: EvalSection {
                eval_fraction: 0.1,
                split_seed: 0,
                split: Split::Eval,
                vector: VectorSource::FirstExample,
                max_new_tokens: 64,
            },
            analysis: AnalysisSection {
                split: Split::All,
                seed: 0,
                replacements: 1,
                vector: VectorSource::MeanOfExamples,
                min_chunk_count: 5,
            },
            ratings: RatingSection { split: Split::Eval, n_items: 40, seed: 0, with_generated: true },
        }
    }
}

/// Tables whose keys are free-form; an override replaces them whole.
const OPEN_TABLES: &[&str] = &["synth.pos_mix"];

fn merge(base: &mut Table, over: Table, prefix: &str) -> CliResult<()> {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(slot) = base.get_mut(&k) else {
            return Err(CliError::config(format!("unknown key {path}")));
        };
        match (slot, v) {
            (Value::Table(b), Value::Table(o)) if !OPEN_TABLES.contains(&path.as_str()) => merge(b, o, &path)?,
            (slot, v) => *slot = v,
        }
    }
    Ok(())
}

/// `a.b.c=value` as a nested table. The value is parsed as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(s: &str) -> CliResult<Table> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::config(format!("override {s:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("bad override key {key:?}")));
    }
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = Table::from_iter([(last.to_string(), value)]);
    for p in parts.into_iter().rev() {
        table = Table::from_iter([(p.to_string(), Value::Table(table))]);
    }
    Ok(table)
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut base = match file {
            Some(path) if path.extension().is_some_and(|e| e == "json") => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let manifest: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                let cfg: RunConfig = serde_json::from_value(manifest["config"].clone())
                    .map_err(|e| CliError::config(format!("{}: no usable config object: {e}", path.display())))?;
                to_table(&cfg)?
            }
            Some(path) => {
                let mut base = to_table(&Self::default())?;
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let user: Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                merge(&mut base, user, "")?;
                base
            }
            None => to_table(&Self::default())?,
        };
        for o in overrides {
            merge(&mut base, parse_override(o)?, "")?;
        }
        let cfg: RunConfig = Value::Table(base).try_into().map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let f = self.eval.eval_fraction;
        if !(0.0..1.0).contains(&f) {
            return Err(CliError::config(format!("eval.eval_fraction {f} outside [0, 1)")));
        }
        self.pos_mix()?;
        self.model_config(1).validate()?;
        self.denoise().validate()?;
        self.finetune().validate()?;
        self.corruption.validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_encoder_layers: m.n_encoder_layers,
            n_decoder_layers: m.n_decoder_layers,
            d_ffn: m.d_ffn,
            max_len: m.max_len,
            dropout: m.dropout,
            tie_embeddings: m.tie_embeddings,
            init_std: m.init_std,
            layer_norm_eps: m.layer_norm_eps,
        }
    }

    fn pos_mix(&self) -> CliResult<Vec<(PosCategory, f64)>> {
        self.synth
            .pos_mix
            .iter()
            .map(|(k, p)| {
                let cat = PosCategory::ALL
                    .into_iter()
                    .find(|c| c.as_str() == k)
                    .ok_or_else(|| CliError::config(format!("synth.pos_mix: unknown category {k:?}")))?;
                Ok((cat, *p))
            })
            .collect()
    }

    pub fn synth_spec(&self) -> CliResult<SynthSpec> {
        let mut spec = SynthSpec::new(self.synth.seed, self.synth.n_senses).with_pos_mix(&self.pos_mix()?);
        spec.min_examples = self.synth.min_examples;
        spec.max_examples = self.synth.max_examples;
        spec.validate()?;
        Ok(spec)
    }

    /// A non-positive `clip_norm` disables clipping.
    pub fn denoise(&self) -> TrainConfig {
        unclip(self.denoise.clone())
    }

    pub fn finetune(&self) -> TrainConfig {
        unclip(self.finetune.clone())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { vector: self.eval.vector, max_new_tokens: self.eval.max_new_tokens }
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions { vector: self.analysis.vector, replacements: self.analysis.replacements }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn unclip(mut c: TrainConfig) -> TrainConfig {
    if c.clip_norm.is_some_and(|n| n <= 0.0) {
        c.clip_norm = None;
    }
    c
}

fn to_table(cfg: &RunConfig) -> CliResult<Table> {
    Table::try_from(cfg).map_err(|e| CliError::config(e.to_string()))
}
