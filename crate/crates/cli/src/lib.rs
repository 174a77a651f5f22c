//! Command-line surface of vec2gloss: run configuration, checkpoints and one
//! subcommand per pipeline stage. Every command writes its outputs and a
//! `<command>.manifest.json` under `paths.output`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsutil;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use checkpoint::{Checkpoint, Provenance};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "vec2gloss", version, about = "Generate glosses from contextual vectors and analyze them")]
pub struct Cli {
    /// TOML config, or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set finetune.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (`paths.output`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Sense file (`paths.corpus`).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Trained checkpoint (`paths.checkpoint`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus and its chunk annotations.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        /// Number of senses.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Stage 1: span-corruption denoising on the training glosses.
    Denoise,
    /// Stage 2: gloss generation through the single-vector bottleneck.
    Finetune {
        /// Checkpoint to start from (`paths.denoised`).
        #[arg(long)]
        from: Option<PathBuf>,
        /// Start from fresh weights instead.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Generate glosses for sentences whose target is marked `〈…〉`.
    Generate {
        #[arg(long)]
        sentence: Vec<String>,
        /// File with one marked sentence per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// BLEU and METEOR by part of speech.
    Eval {
        #[arg(long, value_parser = ["train", "eval", "all"])]
        split: Option<String>,
    },
    /// Token, gloss and POS dependency tables.
    Deps,
    /// Dependency indices by annotated semantic type.
    Chunks {
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Multiple-choice rating sheet and answer key.
    Ratings {
        #[arg(long)]
        n_items: Option<usize>,
    },
}

fn path_set(key: &str, p: &std::path::Path) -> String {
    let quoted = toml::Value::String(p.display().to_string()).to_string();
    format!("{key}={quoted}")
}

impl Cli {
    /// The resolved config: file, `--set`, then dedicated flags.
    pub fn resolve_config(&self) -> CliResult<RunConfig> {
        let mut sets = self.overrides.clone();
        for (key, p) in [("paths.output", &self.out), ("paths.corpus", &self.corpus), ("paths.checkpoint", &self.checkpoint)] {
            if let Some(p) = p {
                sets.push(path_set(key, p));
            }
        }
        match &self.command {
            Command::Synth { seed, n } => {
                sets.extend(seed.map(|s| format!("synth.seed={s}")));
                sets.extend(n.map(|n| format!("synth.n_senses={n}")));
            }
            Command::Finetune { from, from_scratch } => {
                sets.extend(from.as_deref().map(|p| path_set("paths.denoised", p)));
                if *from_scratch {
                    sets.push("mode.from_scratch=true".into());
                }
            }
            Command::Eval { split } => sets.extend(split.as_ref().map(|s| format!("eval.split=\"{s}\""))),
            Command::Chunks { annotations } => sets.extend(annotations.as_deref().map(|p| path_set("paths.annotations", p))),
            Command::Ratings { n_items } => sets.extend(n_items.map(|n| format!("ratings.n_items={n}"))),
            Command::Denoise | Command::Generate { .. } | Command::Deps => {}
        }
        RunConfig::resolve(self.config.as_deref(), &sets)
    }

    /// Run the command; the returned text is the stdout summary.
    pub fn run(&self) -> CliResult<String> {
        let cfg = self.resolve_config()?;
        match &self.command {
            Command::Synth { .. } => commands::synth(&cfg),
            Command::Denoise => commands::denoise(&cfg),
            Command::Finetune { .. } => commands::finetune(&cfg),
            Command::Generate { sentence, input } => commands::generate(&cfg, sentence, input.as_deref()),
            Command::Eval { .. } => commands::eval(&cfg),
            Command::Deps => commands::deps(&cfg),
            Command::Chunks { .. } => commands::chunks(&cfg),
            Command::Ratings { .. } => commands::ratings(&cfg),
        }
    }
}
