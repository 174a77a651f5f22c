use super::*;
use vec2gloss_numerics::gradcheck;
use vec2gloss_numerics::{AdamW, AdamWConfig};

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 2,
        n_decoder_layers: 2,
        d_ffn: 12,
        max_len: 16,
        dropout: 0.0,
        tie_embeddings: true,
        init_std: 0.3,
        layer_norm_eps: 1e-5,
    }
}

const SRC: [TokenId; 5] = [7, 9, 11, 8, 10];
const TGT: [TokenId; 4] = [12, 5, 13, 6];

fn prefix() -> Vec<TokenId> {
    let mut p = vec![BOS];
    p.extend_from_slice(&TGT);
    p
}

#[test]
fn parameter_count_matches_store() {
    for tie in [true, false] {
        let mut c = tiny(20);
        c.tie_embeddings = tie;
        let m: Model<f32> = Model::new(c.clone(), 0).unwrap();
        assert_eq!(m.params().num_elements(), c.parameter_count());
    }
    let c = ModelConfig::new(500);
    let m: Model<f32> = Model::new(c.clone(), 0).unwrap();
    assert_eq!(m.params().num_elements(), c.parameter_count());
}

#[test]
fn config_validation() {
    let mut c = tiny(20);
    c.n_heads = 3;
    assert!(Model::<f32>::new(c, 0).is_err());
    let mut c = tiny(20);
    c.dropout = 1.0;
    assert!(Model::<f32>::new(c, 0).is_err());
}

fn check_loss_gradients(bottleneck: bool, tie: bool) {
    let mut config = tiny(16);
    config.tie_embeddings = tie;
    let model: Model<f64> = Model::new(config, 3).unwrap();
    let mask = TargetMask::for_span(SRC.len(), 1, 3).unwrap();
    let short_src = [9, 10, 7];
    let short_mask = TargetMask::for_span(3, 2, 3).unwrap();
    let short_tgt = [14, 15];
    let batch = |b: bool| {
        vec![
            Example { source: &SRC, target_mask: b.then_some(&mask), target: &TGT },
            Example { source: &short_src, target_mask: b.then_some(&short_mask), target: &short_tgt },
        ]
    };
    let with_store = |store: &ParamStore<f64>| {
        let mut m = model.clone();
        *m.params_mut() = store.clone();
        m
    };
    let mut store = model.params().clone();
    let report = gradcheck::check(
        &mut store,
        1e-5,
        1e-6,
        |s| {
            let m = with_store(s);
            let g = Tape::new();
            let loss = m.loss(&g, &batch(bottleneck), Mode::Eval).unwrap();
            Ok(g.value(loss).data()[0])
        },
        |s| {
            let m = with_store(s);
            let g = Tape::new();
            let loss = m.loss(&g, &batch(bottleneck), Mode::Eval).unwrap();
            g.backward(loss, s)
        },
    )
    .unwrap();
    assert!(report.checked > 1000);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn seq2seq_gradients_match_finite_differences() {
    check_loss_gradients(false, true);
}

#[test]
fn bottleneck_gradients_match_finite_differences() {
    check_loss_gradients(true, true);
    check_loss_gradients(true, false);
}

#[test]
fn fused_bottleneck_equals_encode_pool_decode() {
    let model: Model<f32> = Model::new(tiny(16), 1).unwrap();
    let mask = TargetMask::for_span(SRC.len(), 2, 4).unwrap();
    let fused = model.bottleneck_logits(&SRC, &mask, &prefix()).unwrap();
    let v = model.semantic_vector(&SRC, &mask).unwrap();
    let staged = model.decode_logits(&v, &prefix()).unwrap();
    assert_eq!(fused.logits, staged.logits);
}

#[test]
fn decoder_sees_source_only_through_the_vector() {
    let model: Model<f64> = Model::new(tiny(16), 2).unwrap();
    let mask = TargetMask::for_span(SRC.len(), 2, 3).unwrap();
    let v = model.semantic_vector(&SRC, &mask).unwrap();
    let out = model.decode_logits(&v, &prefix()).unwrap();
    // A length-one memory gets all the cross-attention weight.
    for w in &out.cross_attention {
        assert_eq!(w.shape(), &[2, prefix().len(), 1]);
        assert!(w.data().iter().all(|&x| x == 1.0));
    }
    // Any source with the same pooled vector decodes identically, so moving
    // the vector by hand must move the logits and nothing else can.
    let mut shifted = v.array().clone();
    shifted.data_mut()[0] += 0.5;
    let moved = model.decode_logits(&SemanticVector::new(shifted).unwrap(), &prefix()).unwrap();
    assert_ne!(moved.logits, out.logits);
    let zero = model.decode_logits(&SemanticVector::zeros(8), &prefix()).unwrap();
    assert_ne!(zero.logits, out.logits);
}

#[test]
fn single_state_seq2seq_equals_vector_decoding() {
    let model: Model<f32> = Model::new(tiny(16), 4).unwrap();
    let src = [9];
    let s2s = model.seq2seq_logits(&src, &prefix()).unwrap();
    let v = model.semantic_vector(&src, &TargetMask::new(vec![true]).unwrap()).unwrap();
    assert_eq!(v.array().data(), model.encode(&src).unwrap().states.data());
    assert_eq!(model.decode_logits(&v, &prefix()).unwrap().logits, s2s.logits);
}

#[test]
fn causal_decoding_ignores_future_tokens() {
    let model: Model<f64> = Model::new(tiny(16), 5).unwrap();
    let v = model.semantic_vector(&SRC, &TargetMask::for_span(5, 0, 2).unwrap()).unwrap();
    let a = model.decode_logits(&v, &prefix()).unwrap();
    let mut other = prefix();
    other[3] = 15;
    let b = model.decode_logits(&v, &other).unwrap();
    for i in 0..3 {
        assert_eq!(a.logits.row(i), b.logits.row(i));
    }
    assert_ne!(a.logits.row(3), b.logits.row(3));
    for w in &a.self_attention {
        let t = prefix().len();
        for h in 0..2 {
            for i in 0..t {
                let row = &w.data()[(h * t + i) * t..(h * t + i + 1) * t];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row[i + 1..].iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn context_masked_decoding_ignores_all_previous_tokens() {
    let model: Model<f64> = Model::new(tiny(16), 6).unwrap();
    let v = model.semantic_vector(&SRC, &TargetMask::for_span(5, 1, 4).unwrap()).unwrap();
    let a = model.decode_logits_with(&v, &prefix(), DecoderMask::ContextMasked).unwrap();
    let other = [BOS, 15, 14, 7, 9];
    let b = model.decode_logits_with(&v, &other, DecoderMask::ContextMasked).unwrap();
    assert_eq!(a.logits, b.logits);
    let causal = model.decode_logits(&v, &prefix()).unwrap();
    assert_eq!(a.logits.row(0), causal.logits.row(0));
    assert_ne!(a.logits.row(2), causal.logits.row(2));
    let v2 = model.semantic_vector(&[8, 8, 8], &TargetMask::for_span(3, 0, 1).unwrap()).unwrap();
    let c = model.decode_logits_with(&v2, &prefix(), DecoderMask::ContextMasked).unwrap();
    assert_ne!(a.logits, c.logits);
}

#[test]
fn encoder_is_order_sensitive() {
    let model: Model<f64> = Model::new(tiny(16), 7).unwrap();
    let mask = TargetMask::for_span(3, 1, 2).unwrap();
    let a = model.semantic_vector(&[7, 8, 9], &mask).unwrap();
    let b = model.semantic_vector(&[9, 8, 7], &mask).unwrap();
    assert_ne!(a, b);
}

#[test]
fn construction_is_deterministic() {
    let a: Model<f32> = Model::new(tiny(16), 9).unwrap();
    let b: Model<f32> = Model::new(tiny(16), 9).unwrap();
    let c: Model<f32> = Model::new(tiny(16), 10).unwrap();
    let values = |m: &Model<f32>| m.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}

#[test]
fn named_round_trip_and_cast() {
    let a: Model<f32> = Model::new(tiny(16), 11).unwrap();
    let named: Vec<_> = a.params().iter().map(|p| (p.name.clone(), (*p.value).clone())).collect();
    let b = Model::from_named(tiny(16), named.clone()).unwrap();
    let mask = TargetMask::for_span(5, 0, 1).unwrap();
    assert_eq!(
        a.bottleneck_logits(&SRC, &mask, &prefix()).unwrap().logits,
        b.bottleneck_logits(&SRC, &mask, &prefix()).unwrap().logits
    );
    assert!(Model::from_named(tiny(16), named[1..].to_vec()).is_err());
    let wide: Model<f64> = a.cast();
    let la = a.bottleneck_logits(&SRC, &mask, &prefix()).unwrap().logits;
    let lw = wide.bottleneck_logits(&SRC, &mask, &prefix()).unwrap().logits;
    for (x, y) in la.data().iter().zip(lw.data()) {
        assert!((f64::from(*x) - y).abs() < 1e-4);
    }
}

#[test]
fn input_errors() {
    let model: Model<f32> = Model::new(tiny(16), 0).unwrap();
    assert!(matches!(model.encode(&[]), Err(Error::EmptySequence)));
    assert!(matches!(model.encode(&[7; 17]), Err(Error::SequenceTooLong { len: 17, max: 16 })));
    assert!(model.encode(&[99]).is_err());
    let v = SemanticVector::zeros(8);
    assert!(model.decode_logits(&v, &[7, 8]).is_err());
    assert!(model.decode_logits(&SemanticVector::zeros(4), &[BOS]).is_err());
    assert!(TargetMask::new(vec![false, false]).is_err());
    assert!(TargetMask::new(vec![true, false, true]).is_err());
    assert!(TargetMask::for_span(3, 2, 5).is_err());
    let states = model.encode(&SRC).unwrap();
    assert!(model.pool_target(&states, &TargetMask::new(vec![true]).unwrap()).is_err());
}

#[test]
fn generation_respects_budget() {
    let model: Model<f32> = Model::new(tiny(16), 12).unwrap();
    let v = model.semantic_vector(&SRC, &TargetMask::for_span(5, 0, 1).unwrap()).unwrap();
    let g = model.generate(&v, 3).unwrap();
    assert!(g.ids.len() <= 3);
    assert!(g.truncated || !g.ids.contains(&EOS));
    assert!(model.generate(&v, 0).is_err());
}

#[test]
fn bottleneck_training_memorizes_one_gloss() {
    let mut config = tiny(16);
    config.init_std = 0.02;
    let mut model: Model<f32> = Model::new(config, 13).unwrap();
    let mask = TargetMask::for_span(5, 1, 3).unwrap();
    let mut opt = AdamW::new(AdamWConfig { base_lr: 1e-2, linear_decay: false, ..Default::default() }, model.params(), 300).unwrap();
    let batch = [Example { source: &SRC, target_mask: Some(&mask), target: &TGT }];
    for _ in 0..200 {
        let g = Tape::new();
        let loss = model.loss(&g, &batch, Mode::Eval).unwrap();
        g.backward(loss, model.params_mut()).unwrap();
        opt.step(model.params_mut()).unwrap();
    }
    let v = model.semantic_vector(&SRC, &mask).unwrap();
    assert_eq!(model.generate(&v, 10).unwrap(), Generation { ids: TGT.to_vec(), truncated: false });
}

#[test]
fn dropout_changes_training_forward_only() {
    let mut config = tiny(16);
    config.dropout = 0.3;
    let model: Model<f64> = Model::new(config, 14).unwrap();
    let mask = TargetMask::for_span(5, 1, 3).unwrap();
    let batch = [Example { source: &SRC, target_mask: Some(&mask), target: &TGT }];
    let run = |mode: Mode<'_>| {
        let g = Tape::new();
        let l = model.loss(&g, &batch, mode).unwrap();
        g.value(l).data()[0]
    };
    let rng = RefCell::new(ChaCha8Rng::seed_from_u64(1));
    assert_eq!(run(Mode::Eval), run(Mode::Eval));
    assert_ne!(run(Mode::Eval), run(Mode::Train(&rng)));
    let (r1, r2) = (RefCell::new(ChaCha8Rng::seed_from_u64(2)), RefCell::new(ChaCha8Rng::seed_from_u64(2)));
    assert_eq!(run(Mode::Train(&r1)), run(Mode::Train(&r2)));
}
