use super::*;
use crate::corpus::{synth_corpus, SynthSpec};
use crate::model::ModelConfig;
use crate::pipeline::{build_instances, train_finetune, TrainConfig};

fn setup(n: usize, seed: u64) -> (Vec<Sense>, Tokenizer, Model<f64>) {
    let senses = synth_corpus(&SynthSpec::new(seed, n)).unwrap().senses;
    let tok = Tokenizer::for_senses(&senses);
    let mut c = ModelConfig::new(tok.vocab_size());
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ffn = 32;
    c.max_len = 48;
    c.init_std = 0.2;
    (senses, tok, Model::new(c, seed).unwrap())
}

#[test]
fn identities_hold_exactly() {
    let (senses, tok, model) = setup(30, 1);
    let opts = AnalysisOptions::default();
    for s in senses.iter().take(8) {
        let rep = sample_replacement(s, &senses, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let dep = gloss_dependency(&model, &tok, s, &[rep], &opts).unwrap();
        assert_eq!(dep.tokens[0].delta_ctx, 0.0);
        assert_eq!(dep.tokens[0].p_mask, dep.tokens[0].p_full);
        for t in &dep.tokens {
            assert!(t.p_full > 0.0 && t.p_full <= 1.0 && t.p_rep > 0.0 && t.p_mask <= 1.0);
            assert!((t.delta_sem + t.p_rep.ln() - t.p_full.ln()).abs() < 1e-9);
            assert!((t.delta_ctx + t.p_mask.ln() - t.p_full.ln()).abs() < 1e-9);
        }
        let own = gloss_dependency(&model, &tok, s, &[s], &opts).unwrap();
        assert!(own.tokens.iter().all(|t| t.delta_sem == 0.0 && t.p_rep == t.p_full));
        assert_eq!(own.mean_delta_sem, 0.0);
        assert_eq!(own.n_tokens, s.gloss.chars().count());
    }
}

#[test]
fn batched_probabilities_match_position_loop() {
    let (senses, tok, model) = setup(10, 2);
    let s = &senses[0];
    let v = sense_vector(&model, s, &tok, VectorSource::FirstExample).unwrap();
    let (reference, _) = reference_ids(s, &tok);
    let full = token_probs(&model, &v, &reference).unwrap();
    let masked = masked_probs(&model, &v, &reference).unwrap();
    for i in 0..reference.len() {
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(&reference[..i]);
        for (mode, batch) in [(DecoderMask::Causal, &full), (DecoderMask::ContextMasked, &masked)] {
            let out = model.decode_logits_with(&v, &prefix, mode).unwrap();
            let row: Vec<f64> = out.logits.row(i).to_vec();
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((row[reference[i]].exp() / z - batch[i]).abs() < 1e-12);
            let probs: f64 = row.iter().map(|x| x.exp() / z).sum();
            assert!((probs - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn input_errors() {
    let (senses, tok, model) = setup(10, 3);
    let v = sense_vector(&model, &senses[0], &tok, VectorSource::FirstExample).unwrap();
    assert!(token_probs(&model, &v, &[100_000]).is_err());
    assert!(token_probs(&model, &v, &[]).is_err());
    assert!(replaced_probs(&model, &SemanticVector::zeros(3), &[tok.sentinel(0)]).is_err());
}

#[test]
fn replacement_sampling() {
    let (senses, _, _) = setup(400, 4);
    let nouns: Vec<Sense> = senses.iter().filter(|s| s.category() == PosCategory::N).take(11).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        assert_eq!(sample_replacement(&nouns[0], &nouns[..2], &mut rng).unwrap().sense_id, nouns[1].sense_id);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let n = 5000;
    for _ in 0..n {
        let r = sample_replacement(&nouns[0], &nouns, &mut rng).unwrap();
        assert_ne!(r.sense_id, nouns[0].sense_id);
        *counts.entry(r.sense_id.clone()).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 10);
    let (p, nf) = (0.1, n as f64);
    let sigma = (nf * p * (1.0 - p)).sqrt();
    assert!(counts.values().all(|&c| (c as f64 - nf * p).abs() < 3.0 * sigma), "{counts:?}");
    let verb = senses.iter().find(|s| s.category() == PosCategory::V).unwrap();
    assert!(matches!(sample_replacement(verb, &nouns, &mut rng), Err(Error::NoCandidate(_))));
}

#[test]
fn pooled_vector_ignores_example_order() {
    let (senses, tok, model) = setup(30, 5);
    let s = senses.iter().find(|s| s.examples.len() >= 3).unwrap();
    let mut rev = s.clone();
    rev.examples.reverse();
    let a = sense_vector(&model, s, &tok, VectorSource::MeanOfExamples).unwrap();
    let b = sense_vector(&model, &rev, &tok, VectorSource::MeanOfExamples).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_token_gloss_mean_is_its_delta() {
    let (senses, tok, model) = setup(30, 6);
    let mut s = senses[0].clone();
    s.gloss = "。".into();
    let rep = sample_replacement(&s, &senses, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let dep = gloss_dependency(&model, &tok, &s, &[rep], &AnalysisOptions::default()).unwrap();
    assert_eq!(dep.n_tokens, 1);
    let last = dep.tokens.last().unwrap();
    assert_eq!((dep.mean_delta_sem, dep.mean_delta_ctx), (last.delta_sem, last.delta_ctx));
    s.gloss.clear();
    assert!(gloss_dependency(&model, &tok, &s, &[rep], &AnalysisOptions::default()).is_err());
}

#[test]
fn pos_table_is_seeded_and_covers_present_categories() {
    let (senses, tok, model) = setup(40, 7);
    let opts = AnalysisOptions { replacements: 2, ..Default::default() };
    let a = pos_dependency_table(&model, &tok, &senses, 3, &opts).unwrap();
    let b = pos_dependency_table(&model, &tok, &senses, 3, &opts).unwrap();
    assert_eq!(a, b);
    let present: Vec<PosCategory> =
        PosCategory::CONTENT.into_iter().filter(|c| senses.iter().any(|s| s.category() == *c)).collect();
    assert_eq!(a.iter().map(|r| r.pos).collect::<Vec<_>>(), present);
    assert!(pos_table(&a).lines().count() == a.len() + 1);
}

#[test]
fn memorized_glosses_are_confident() {
    let (senses, tok, _) = setup(12, 8);
    let mut c = ModelConfig::new(tok.vocab_size());
    c.d_model = 32;
    c.n_heads = 2;
    c.d_ffn = 64;
    c.max_len = 48;
    c.dropout = 0.0;
    let mut model: Model<f32> = Model::new(c, 0).unwrap();
    let instances = build_instances(&senses, &tok).unwrap();
    let config = TrainConfig { base_lr: 3e-3, epochs: 150, weight_decay: 0.0, ..TrainConfig::default() };
    train_finetune(&mut model, &instances, &config).unwrap();
    let wide: Model<f64> = model.cast();
    for s in &senses {
        let v = sense_vector(&wide, s, &tok, VectorSource::FirstExample).unwrap();
        let (reference, _) = reference_ids(s, &tok);
        let p = token_probs(&wide, &v, &reference).unwrap();
        assert!(p.iter().all(|&p| p > 0.9), "{}: {p:?}", s.sense_id);
    }
}

#[test]
fn time_annotation_parses_into_seven_chunks() {
    let line = "cwn-x\t表/同一事件/在/後述時段/中/持續/發生。\t--/Event/Preposition/Time/Preposition/Modifier/Action";
    let a = ChunkAnnotation::parse_line(line).unwrap();
    assert_eq!(a.chunks.len(), 7);
    assert_eq!(a.chunks[0].sem_type, UNTYPED);
    assert_eq!(a.chunks[3].text, "後述時段");
    assert_eq!((a.chunks[3].start, a.chunks[3].end), (6, 10));
    assert_eq!(a.text(), "表同一事件在後述時段中持續發生。");
    assert_eq!(a.to_line(), line);
    a.validate("表同一事件在後述時段中持續發生。").unwrap();
    let err = a.validate("表同一事件在後述時段中發生。").unwrap_err();
    assert!(err.to_string().contains("cwn-x"));
    assert!(ChunkAnnotation::parse_line("x\t表/同\tEvent/Time").is_err());
    assert!(ChunkAnnotation::parse_line("x\t表/同\t--").is_err());
    assert_eq!(a.chunk_at(16), 6);
}

#[test]
fn chunk_rows_respect_threshold_and_coverage() {
    let corpus = synth_corpus(&SynthSpec::new(9, 40)).unwrap();
    let tok = Tokenizer::for_senses(&corpus.senses);
    let (_, _, model) = setup(40, 9);
    let annotations = parse_annotations(&corpus.annotation_lines()).unwrap();
    let opts = AnalysisOptions::default();
    let all = chunk_dependency(&model, &tok, &annotations, &corpus.senses, 0, 1, &opts).unwrap();
    assert!(all.iter().all(|r| r.semantic_type != UNTYPED && r.se_sem >= 0.0));
    let rare = all.iter().min_by_key(|r| r.n_chunks).unwrap();
    let filtered = chunk_dependency(&model, &tok, &annotations, &corpus.senses, 0, rare.n_chunks + 1, &opts).unwrap();
    assert!(!filtered.iter().any(|r| r.semantic_type == rare.semantic_type));
    assert!(filtered.iter().all(|r| r.n_chunks > rare.n_chunks));

    let mut broken = annotations.clone();
    broken[2].chunks.pop();
    let err = chunk_dependency(&model, &tok, &broken, &corpus.senses, 0, 1, &opts).unwrap_err();
    assert!(err.to_string().contains(&broken[2].sense_id));
}

#[test]
fn rating_sheet_is_balanced() {
    let senses = synth_corpus(&SynthSpec::new(10, 600)).unwrap().senses;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sheet = make_rating_items(&senses, 140, &senses, None, &mut rng).unwrap();
    assert_eq!(sheet.items.len(), 140);
    for cat in PosCategory::CONTENT {
        assert_eq!(sheet.items.iter().filter(|i| i.pos == cat).count(), 35);
    }
    let by_id: BTreeMap<&str, &Sense> = senses.iter().map(|s| (s.sense_id.as_str(), s)).collect();
    for (item, key) in sheet.items.iter().zip(&sheet.key) {
        let target = by_id[key.sense_id.as_str()];
        assert_eq!(item.options[key.answer], target.lemma);
        assert_eq!(item.definition, target.gloss);
        let distinct: std::collections::HashSet<&String> = item.options.iter().collect();
        assert_eq!(distinct.len(), 4);
        let lemma_cat = |l: &str| senses.iter().find(|s| s.lemma == l).unwrap().category();
        assert!(item.options.iter().all(|o| lemma_cat(o) == item.pos));
    }
    assert!(!sheet.sheet_text().contains("sense_id"));
    assert_eq!(sheet.key_tsv().lines().count(), 141);
}

#[test]
fn answer_positions_are_uniform() {
    let senses = synth_corpus(&SynthSpec::new(11, 1200)).unwrap().senses;
    let generated: BTreeMap<String, String> = senses.iter().map(|s| (s.sense_id.clone(), format!("生成{}", s.gloss))).collect();
    let sheet = make_rating_items(&senses, 400, &senses, Some(&generated), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut counts = [0usize; 4];
    for k in &sheet.key {
        counts[k.answer] += 1;
    }
    let sigma = (400.0f64 * 0.25 * 0.75).sqrt();
    assert!(counts.iter().all(|&c| (c as f64 - 100.0).abs() < 3.0 * sigma), "{counts:?}");
    let n_gen = sheet.items.iter().filter(|i| i.source == DefinitionSource::Generated).count();
    assert!(n_gen > 100 && n_gen < 300);
    assert!(sheet.items.iter().all(|i| (i.source == DefinitionSource::Generated) == i.definition.starts_with("生成")));
}

#[test]
fn rating_errors() {
    let senses = synth_corpus(&SynthSpec::new(12, 100)).unwrap().senses;
    let nouns: Vec<Sense> = senses.iter().filter(|s| s.category() == PosCategory::N).take(3).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        make_rating_items(&senses, 4, &nouns, None, &mut rng),
        Err(Error::InsufficientDistractors { need: 3, .. })
    ));
    assert!(make_rating_items(&senses, 0, &senses, None, &mut rng).is_err());
}
