use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vec2gloss::analysis::{
    all_gloss_dependencies, chunk_dependency, gloss_table, make_rating_items, parse_annotations, pos_dependency_rows,
    pos_table, token_table, type_table,
};
use vec2gloss::corpus::{load_senses, split, synth_corpus, write_senses, ExampleSentence, Sense, Tokenizer, UNK};
use vec2gloss::metrics::{eval_by_pos, sense_vector};
use vec2gloss::model::{Model, TargetMask};
use vec2gloss::pipeline::{build_instances, train_denoise, train_finetune_with, TrainReport};

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::{RunConfig, Split};
use crate::error::{CliError, CliResult};
use crate::fsutil::{atomic_write, sha256_file, sha256_hex};

/// Everything needed to rerun a command: the resolved config, arguments that
/// are not part of it, and hashes of what was read and written.
#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    arguments: &'a BTreeMap<String, String>,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

struct Run<'a> {
    command: &'static str,
    cfg: &'a RunConfig,
    arguments: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(command: &'static str, cfg: &'a RunConfig) -> Self {
        Self { command, cfg, arguments: BTreeMap::new(), inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    fn input(&mut self, path: &Path) -> CliResult<String> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash.clone());
        Ok(hash)
    }

    fn output_path(&self, name: &str) -> PathBuf {
        self.cfg.paths.output.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.output_path(name);
        atomic_write(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    fn finish(self) -> CliResult<()> {
        let path = self.output_path(&format!("{}.manifest.json", self.command));
        let manifest = Manifest {
            tool: "vec2gloss",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            arguments: &self.arguments,
            config: self.cfg,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        atomic_write(&path, json.as_bytes())
    }

    fn corpus(&mut self) -> CliResult<(Vec<Sense>, String)> {
        let path = &self.cfg.paths.corpus;
        let hash = self.input(path)?;
        Ok((load_senses(path)?, hash))
    }

    fn checkpoint(&mut self, path: &Path) -> CliResult<(Checkpoint, String)> {
        let hash = self.input(path)?;
        Ok((Checkpoint::load(path)?, hash))
    }
}

/// The requested side of the train/eval split; a zero eval fraction means
/// both sides are the whole corpus.
pub fn select(cfg: &RunConfig, senses: Vec<Sense>, which: Split) -> CliResult<Vec<Sense>> {
    if which == Split::All || cfg.eval.eval_fraction == 0.0 {
        return Ok(senses);
    }
    let (train, eval) = split(&senses, cfg.eval.eval_fraction, cfg.eval.split_seed)?;
    Ok(if which == Split::Train { train } else { eval })
}

fn log_jsonl(report: &TrainReport) -> String {
    let mut out = String::new();
    for r in &report.log {
        out.push_str(&serde_json::to_string(r).expect("log record serializes"));
        out.push('\n');
    }
    out
}

pub fn synth(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("synth", cfg);
    let corpus = synth_corpus(&cfg.synth_spec()?)?;
    let senses = run.write("senses.tsv", write_senses(&corpus.senses).as_bytes())?;
    run.write("annotations.tsv", corpus.annotation_lines().as_bytes())?;
    run.finish()?;
    Ok(format!("{} senses -> {}", corpus.senses.len(), senses.display()))
}

pub fn denoise(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("denoise", cfg);
    let (senses, corpus_hash) = run.corpus()?;
    let tokenizer = Tokenizer::for_senses(&senses);
    let train = select(cfg, senses, Split::Train)?;
    let glosses: Vec<String> = train.iter().map(|s| s.gloss.clone()).collect();
    let mut model = Model::<f32>::new(cfg.model_config(tokenizer.vocab_size()), cfg.model.init_seed)?;
    let tc = cfg.denoise();
    let report = train_denoise(&mut model, &glosses, &tokenizer, &tc, &cfg.corruption)?;
    let provenance = Provenance {
        stage: "denoise".into(),
        init_seed: cfg.model.init_seed,
        train_seed: tc.seed,
        epochs: tc.epochs,
        corpus_sha256: corpus_hash,
        parent_sha256: None,
    };
    let ckpt = Checkpoint { model, tokenizer, provenance };
    let path = run.write("denoise.ckpt", &ckpt.to_bytes())?;
    run.write("denoise_log.jsonl", log_jsonl(&report).as_bytes())?;
    run.finish()?;
    Ok(format!(
        "denoised {} glosses, final epoch loss {:.4} -> {}",
        glosses.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    ))
}

pub fn finetune(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("finetune", cfg);
    let (senses, corpus_hash) = run.corpus()?;
    let (mut model, tokenizer, parent) = if cfg.mode.from_scratch {
        let tokenizer = Tokenizer::for_senses(&senses);
        let model = Model::<f32>::new(cfg.model_config(tokenizer.vocab_size()), cfg.model.init_seed)?;
        (model, tokenizer, None)
    } else {
        let (ckpt, hash) = run.checkpoint(&cfg.paths.denoised)?;
        (ckpt.model, ckpt.tokenizer, Some(hash))
    };
    let train = select(cfg, senses, Split::Train)?;
    let instances = build_instances(&train, &tokenizer)?;
    let tc = cfg.finetune();
    let report = train_finetune_with(&mut model, &instances, &tc, cfg.mode.objective)?;
    let provenance = Provenance {
        stage: "finetune".into(),
        init_seed: cfg.model.init_seed,
        train_seed: tc.seed,
        epochs: tc.epochs,
        corpus_sha256: corpus_hash,
        parent_sha256: parent,
    };
    let ckpt = Checkpoint { model, tokenizer, provenance };
    let path = run.write("finetune.ckpt", &ckpt.to_bytes())?;
    run.write("finetune_log.jsonl", log_jsonl(&report).as_bytes())?;
    run.finish()?;
    Ok(format!(
        "fine-tuned on {} instances from {} senses, final epoch loss {:.4} -> {}",
        instances.len(),
        train.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    ))
}

/// Generate a gloss for the `〈…〉`-marked target of `sentence`.
pub fn generate_one(ckpt: &Checkpoint, sentence: &str, max_new_tokens: usize) -> CliResult<(String, bool)> {
    let ex = ExampleSentence::from_bracketed(sentence)?;
    let (ids, unknown) = ckpt.tokenizer.encode_with_unknowns(&ex.text);
    if unknown > 0 {
        log::warn!("{unknown} character(s) outside the vocabulary in {sentence:?}");
    }
    let ids = if ids.is_empty() { vec![UNK] } else { ids };
    let mask = TargetMask::for_span(ids.len(), ex.start, ex.end)?;
    let v = ckpt.model.semantic_vector(&ids, &mask)?;
    let g = ckpt.model.generate(&v, max_new_tokens)?;
    Ok((ckpt.tokenizer.decode(&g.ids), g.truncated))
}

pub fn generate(cfg: &RunConfig, sentences: &[String], input: Option<&Path>) -> CliResult<String> {
    let mut run = Run::new("generate", cfg);
    let mut all: Vec<String> = sentences.to_vec();
    if let Some(path) = input {
        run.input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        all.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
        run.arguments.insert("input".into(), path.display().to_string());
    }
    if all.is_empty() {
        return Err(CliError::new("usage", "give --sentence or --input"));
    }
    for (i, s) in sentences.iter().enumerate() {
        run.arguments.insert(format!("sentence.{i}"), s.clone());
    }
    let (ckpt, _) = run.checkpoint(&cfg.paths.checkpoint.clone())?;
    let mut table = String::from("sentence\tgenerated\ttruncated\n");
    let mut lines = Vec::new();
    for s in &all {
        let (text, truncated) = generate_one(&ckpt, s, cfg.eval.max_new_tokens)?;
        table.push_str(&format!("{s}\t{text}\t{truncated}\n"));
        lines.push(text);
    }
    run.write("generations.tsv", table.as_bytes())?;
    run.finish()?;
    Ok(lines.join("\n"))
}

pub fn eval(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("eval", cfg);
    let (ckpt, _) = run.checkpoint(&cfg.paths.checkpoint.clone())?;
    let (senses, _) = run.corpus()?;
    let senses = select(cfg, senses, cfg.eval.split)?;
    let table = eval_by_pos(&ckpt.model, &senses, &ckpt.tokenizer, &cfg.eval_options())?;
    run.write("eval_table.tsv", table.to_tsv().as_bytes())?;
    run.write("eval_table.jsonl", table.to_jsonl().as_bytes())?;
    run.write("eval_items.jsonl", table.items_jsonl().as_bytes())?;
    run.finish()?;
    let all = table.overall(true);
    Ok(format!("{} senses: BLEU {:.4} ± {:.4}, METEOR {:.4} ± {:.4}", all.n_items, all.bleu_mean, all.bleu_se, all.meteor_mean, all.meteor_se))
}

pub fn deps(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("deps", cfg);
    let (ckpt, _) = run.checkpoint(&cfg.paths.checkpoint.clone())?;
    let (senses, _) = run.corpus()?;
    let senses = select(cfg, senses, cfg.analysis.split)?;
    let wide: Model<f64> = ckpt.model.cast();
    let glosses = all_gloss_dependencies(&wide, &ckpt.tokenizer, &senses, cfg.analysis.seed, &cfg.analysis_options())?;
    let rows = pos_dependency_rows(&glosses);
    run.write("token_deps.tsv", token_table(&glosses, &ckpt.tokenizer).as_bytes())?;
    run.write("gloss_deps.tsv", gloss_table(&glosses).as_bytes())?;
    run.write("pos_deps.tsv", pos_table(&rows).as_bytes())?;
    run.finish()?;
    Ok(pos_table(&rows).trim_end().to_string())
}

pub fn chunks(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("chunks", cfg);
    let (ckpt, _) = run.checkpoint(&cfg.paths.checkpoint.clone())?;
    let (senses, _) = run.corpus()?;
    let senses = select(cfg, senses, cfg.analysis.split)?;
    let path = cfg.paths.annotations.clone();
    run.input(&path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let ids: std::collections::HashSet<&str> = senses.iter().map(|s| s.sense_id.as_str()).collect();
    let annotations: Vec<_> = parse_annotations(&text)?.into_iter().filter(|a| ids.contains(a.sense_id.as_str())).collect();
    let wide: Model<f64> = ckpt.model.cast();
    let rows = chunk_dependency(
        &wide,
        &ckpt.tokenizer,
        &annotations,
        &senses,
        cfg.analysis.seed,
        cfg.analysis.min_chunk_count,
        &cfg.analysis_options(),
    )?;
    run.write("type_deps.tsv", type_table(&rows).as_bytes())?;
    run.finish()?;
    Ok(type_table(&rows).trim_end().to_string())
}

pub fn ratings(cfg: &RunConfig) -> CliResult<String> {
    let mut run = Run::new("ratings", cfg);
    let (pool, _) = run.corpus()?;
    let targets = select(cfg, pool.clone(), cfg.ratings.split)?;
    let generated = if cfg.ratings.with_generated {
        let (ckpt, _) = run.checkpoint(&cfg.paths.checkpoint.clone())?;
        let mut map = BTreeMap::new();
        for s in targets.iter().filter(|s| !s.examples.is_empty()) {
            let v = sense_vector(&ckpt.model, s, &ckpt.tokenizer, cfg.eval.vector)?;
            let g = ckpt.model.generate(&v, cfg.eval.max_new_tokens)?;
            let text = ckpt.tokenizer.decode(&g.ids);
            // Show the gloss body only, like the reference definitions.
            let body = text.split_once('。').map(|(_, b)| b.to_string()).unwrap_or(text);
            map.insert(s.sense_id.clone(), body);
        }
        Some(map)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ratings.seed);
    let sheet = make_rating_items(&targets, cfg.ratings.n_items, &pool, generated.as_ref(), &mut rng)?;
    run.write("rating_sheet.txt", sheet.sheet_text().as_bytes())?;
    run.write("rating_key.tsv", sheet.key_tsv().as_bytes())?;
    run.finish()?;
    Ok(format!("{} rating items -> {}", sheet.items.len(), run_output(cfg, "rating_sheet.txt").display()))
}

fn run_output(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.output.join(name)
}
