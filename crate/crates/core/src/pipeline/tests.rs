use super::*;
use crate::corpus::{synth_corpus, PosTag, SynthSpec};
use crate::model::ModelConfig;
use rand::Rng;

fn sym(text: &str) -> Vec<Symbol> {
    // `<n>` marks sentinel n.
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '<' {
            let n: String = chars.by_ref().take_while(|&c| c != '>').collect();
            out.push(Symbol::Sentinel(n.parse().unwrap()));
        } else {
            out.push(Symbol::Char(c));
        }
    }
    out
}

/// Clipped Poisson(2) pmf on {1, 2, 3, 4}, computed from the series.
fn clipped_pmf() -> [f64; 4] {
    let p = |k: i32| (-2.0f64).exp() * 2f64.powi(k) / (1..=k).map(f64::from).product::<f64>();
    let p1 = p(0) + p(1);
    let (p2, p3) = (p(2), p(3));
    [p1, p2, p3, 1.0 - p1 - p2 - p3]
}

#[test]
fn span_lengths_follow_clipped_poisson() {
    let pmf = clipped_pmf();
    for (got, want) in pmf.iter().zip([0.4060, 0.2707, 0.1804, 0.1429]) {
        assert!((got - want).abs() < 5e-5);
    }
    let config = CorruptionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 4];
    let n = 100_000;
    for _ in 0..n {
        let l = sample_span_length(&mut rng, &config);
        assert!((1..=4).contains(&l));
        counts[l - 1] += 1;
    }
    for (c, p) in counts.iter().zip(pmf) {
        assert!((*c as f64 / n as f64 - p).abs() < 0.02);
    }
    let draw = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..50).map(|_| sample_span_length(&mut r, &config)).collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
}

#[test]
fn written_language_pair_reconstructs() {
    let input = sym("以文字媒介<0>出來的訊息。");
    let target = sym("<0>表達<1>");
    assert_eq!(splice(&input, &target).unwrap(), "以文字媒介表達出來的訊息。");
    assert!(splice(&sym("以<1>"), &target).is_err());
    assert!(splice(&input, &sym("表達<0>")).is_err());
}

#[test]
fn span_counts_follow_gloss_length() {
    let config = CorruptionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let p = corrupt("用語音傳送訊息的方式。", &mut rng, &config).unwrap();
        assert_eq!(p.num_spans(), 1);
        assert_eq!(p.target.first(), Some(&Symbol::Sentinel(0)));
        assert_eq!(p.target.last(), Some(&Symbol::Sentinel(1)));
        let long = corrupt("指紅藍的器具，用於切割物品並且裝盛各種液體的容器。", &mut rng, &config).unwrap();
        assert_eq!(long.num_spans(), 2);
        assert!(!long.skipped_span);
    }
    assert!(matches!(corrupt("", &mut rng, &config), Err(Error::GlossTooShort { len: 0 })));
    let one = corrupt("語", &mut rng, &config).unwrap();
    assert_eq!(one.input, vec![Symbol::Sentinel(0)]);
}

#[test]
fn corruption_is_lossless_on_random_glosses() {
    let pool: Vec<char> = "的是在用於以表示一種器具動作方式時間。，語言文字".chars().collect();
    let config = CorruptionConfig { seed: 9, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..1000 {
        let len = rng.random_range(1..=45);
        let gloss: String = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let p = corrupt(&gloss, &mut rng, &config).unwrap();
        assert_eq!(splice(&p.input, &p.target).unwrap(), gloss);
        let sentinels: Vec<usize> =
            p.input.iter().filter_map(|s| if let Symbol::Sentinel(i) = s { Some(*i) } else { None }).collect();
        assert_eq!(sentinels, (0..sentinels.len()).collect::<Vec<_>>());
        assert_eq!(sentinels.len(), if len > 20 { 2 } else { 1 });
    }
}

#[test]
fn corruption_config_validation() {
    assert!(CorruptionConfig { min_len: 3, max_len: 2, ..Default::default() }.validate().is_err());
    assert!(CorruptionConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
    assert!(CorruptionConfig { second_span_threshold: 0, ..Default::default() }.validate().is_err());
}

fn speech_sense() -> Sense {
    Sense {
        sense_id: "cwn-yu-01".into(),
        lemma: "語".into(),
        pos: PosTag::parse("VA").unwrap(),
        gloss: "透過發聲器官，用語音傳送訊息。".into(),
        examples: vec![ExampleSentence::from_bracketed("她不知道為了什麼事而默默不〈語〉。").unwrap()],
    }
}

#[test]
fn speech_instance_masks_the_target_word() {
    let sense = speech_sense();
    let tok = Tokenizer::for_senses(std::slice::from_ref(&sense));
    let inst = build_instance(&sense, &sense.examples[0], &tok).unwrap();
    let selected: Vec<usize> = (0..inst.target_mask.len()).filter(|&i| inst.target_mask.as_slice()[i]).collect();
    assert_eq!(selected, vec![13]);
    assert_eq!(tok.decode(&inst.input_ids), "她不知道為了什麼事而默默不語。");
    assert_eq!(tok.decode(&inst.target_ids), "VA。透過發聲器官，用語音傳送訊息。");

    let mut bare = sense.clone();
    bare.gloss = "透過發聲器官".into();
    assert_eq!(target_text(&bare), "VA。透過發聲器官。");
    bare.gloss = "透過發聲器官。。".into();
    assert_eq!(target_text(&bare), "VA。透過發聲器官。");

    let first = ExampleSentence::from_bracketed("〈語〉言").unwrap();
    let inst = build_instance(&sense, &first, &tok).unwrap();
    assert_eq!(inst.target_mask.as_slice(), &[true, false]);

    let wrong = ExampleSentence { text: "她不知道".into(), start: 0, end: 1 };
    assert!(matches!(build_instance(&sense, &wrong, &tok), Err(Error::SpanMismatch { .. })));
}

#[test]
fn instance_masks_match_offsets() {
    let mut spec = SynthSpec::new(21, 200);
    spec.max_examples = 4;
    let corpus = synth_corpus(&spec).unwrap();
    let tok = Tokenizer::for_senses(&corpus.senses);
    let mut checked = 0;
    for s in &corpus.senses {
        for e in &s.examples {
            let inst = build_instance(s, e, &tok).unwrap();
            assert_eq!(inst.target_mask.selected(), e.end - e.start);
            assert!(inst.target_mask.as_slice()[e.start] && inst.target_mask.as_slice()[e.end - 1]);
            assert_eq!(inst.target_mask.len(), e.char_len());
            checked += 1;
        }
        if checked >= 500 {
            break;
        }
    }
    assert!(checked >= 500);
}

fn small_model(tok: &Tokenizer, seed: u64) -> Model<f32> {
    let mut c = ModelConfig::new(tok.vocab_size());
    c.d_model = 32;
    c.n_heads = 2;
    c.d_ffn = 64;
    c.max_len = 48;
    c.dropout = 0.0;
    Model::new(c, seed).unwrap()
}

fn corpus(n: usize, seed: u64) -> (Vec<Sense>, Tokenizer) {
    let senses = synth_corpus(&SynthSpec::new(seed, n)).unwrap().senses;
    let tok = Tokenizer::for_senses(&senses);
    (senses, tok)
}

#[test]
fn denoise_loss_decreases_each_epoch() {
    let (senses, tok) = corpus(200, 1);
    let glosses: Vec<String> = senses.iter().map(|s| s.gloss.clone()).collect();
    let mut model = small_model(&tok, 0);
    let report = train_denoise(&mut model, &glosses, &tok, &TrainConfig::denoise(), &CorruptionConfig::default()).unwrap();
    assert_eq!(report.epoch_losses.len(), 3);
    assert!(report.epoch_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", report.epoch_losses);
    assert_eq!(report.log.len(), 3 * 25);
    assert_eq!(report.log.last().unwrap().step, 75);
}

#[test]
fn denoise_memorizes_ten_pairs_and_is_deterministic() {
    let (senses, tok) = corpus(10, 2);
    let glosses: Vec<String> = senses.iter().map(|s| s.gloss.clone()).collect();
    let config = TrainConfig { base_lr: 3e-3, epochs: 150, batch_size: 5, linear_decay: false, ..TrainConfig::default() };
    let corruption = CorruptionConfig { seed: 4, ..Default::default() };
    let train = || {
        let mut m = small_model(&tok, 1);
        train_denoise(&mut m, &glosses, &tok, &config, &corruption).unwrap();
        m
    };
    let model = train();
    let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    let pairs: Vec<_> = glosses.iter().map(|g| corrupt(g, &mut rng, &corruption).unwrap()).collect();
    let ids: Vec<_> = pairs.iter().map(|p| (p.input_ids(&tok), p.target_ids(&tok))).collect();
    let examples: Vec<Example<'_>> = ids.iter().map(|(s, t)| Example { source: s, target_mask: None, target: t }).collect();
    let g = Tape::new();
    let loss = model.loss(&g, &examples, Mode::Eval).unwrap();
    assert!(g.value(loss).data()[0] < 0.05, "loss {}", g.value(loss).data()[0]);

    let again = train();
    let values = |m: &Model<f32>| m.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(values(&model), values(&again));
}

#[test]
fn finetune_memorizes_twenty_instances() {
    let (senses, tok) = corpus(20, 3);
    let instances: Vec<_> = senses.iter().map(|s| build_instance(s, &s.examples[0], &tok).unwrap()).collect();
    let mut model = small_model(&tok, 2);
    let config = TrainConfig { base_lr: 3e-3, epochs: 150, batch_size: 5, linear_decay: false, ..TrainConfig::default() };
    train_finetune(&mut model, &instances, &config).unwrap();
    let exact = instances
        .iter()
        .filter(|i| {
            let v = model.semantic_vector(&i.input_ids, &i.target_mask).unwrap();
            model.generate(&v, 47).unwrap().ids == i.target_ids
        })
        .count();
    assert!(exact >= 19, "{exact}/20");
}

#[test]
fn ablation_and_initialization_harnesses() {
    let (senses, tok) = corpus(60, 4);
    let (train, eval) = crate::corpus::split(&senses, 0.2, 0).unwrap();
    let train_i = build_instances(&train, &tok).unwrap();
    let eval_i = build_instances(&eval, &tok).unwrap();
    let config = TrainConfig { base_lr: 1e-3, epochs: 3, ..TrainConfig::default() };
    let base = small_model(&tok, 3);
    let report = ablation(&base, &train_i, &eval_i, &config).unwrap();
    assert!(report.bottleneck_eval_loss.is_finite() && report.control_eval_loss.is_finite());
    assert_ne!(report.bottleneck_eval_loss, report.control_eval_loss);
    println!("ablation: bottleneck {:.4} control {:.4}", report.bottleneck_eval_loss, report.control_eval_loss);

    let glosses: Vec<String> = train.iter().map(|s| s.gloss.clone()).collect();
    let mut warm = base.clone();
    train_denoise(&mut warm, &glosses, &tok, &config, &CorruptionConfig::default()).unwrap();
    let warm_r = train_finetune(&mut warm, &train_i, &config).unwrap();
    let cold_r = train_finetune(&mut base.clone(), &train_i, &config).unwrap();
    let target = cold_r.epoch_losses.last().copied().unwrap();
    println!(
        "epochs to loss {target:.4}: denoise-initialized {:?}, scratch {:?}",
        warm_r.epochs_to_loss(target),
        cold_r.epochs_to_loss(target)
    );
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let (senses, tok) = corpus(8, 5);
    let instances = build_instances(&senses, &tok).unwrap();
    let mut model = small_model(&tok, 4);
    let id = model.params().find("decoder.final_norm.gamma").unwrap();
    let d = model.config().d_model;
    model.params_mut().set_value(id, vec2gloss_numerics::Array::full(&[d], f32::NAN)).unwrap();
    let err = train_finetune(&mut model, &instances, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, step: 0, .. }), "{err}");
}

#[test]
fn recorruption_flag_changes_training() {
    let (senses, tok) = corpus(16, 6);
    let glosses: Vec<String> = senses.iter().map(|s| s.gloss.clone()).collect();
    let run = |recorrupt| {
        let mut m = small_model(&tok, 5);
        let c = TrainConfig { epochs: 2, recorrupt_each_epoch: recorrupt, ..TrainConfig::denoise() };
        train_denoise(&mut m, &glosses, &tok, &c, &CorruptionConfig::default()).unwrap().epoch_losses
    };
    let (fixed, fresh) = (run(false), run(true));
    assert_eq!(fixed[0], fresh[0]);
    assert_ne!(fixed[1], fresh[1]);
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { base_lr: -1.0, ..Default::default() }.validate().is_err());
    assert_eq!(TrainConfig::denoise().epochs, 3);
    assert_eq!(TrainConfig::finetune().epochs, 10);
}
