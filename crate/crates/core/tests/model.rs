use iclforge_core::data::{gen_synthetic_store, split_holdout, ExemplarStore, SyntheticKind, SyntheticSpec};
use iclforge_core::gradcheck::{grad_check, DEFAULT_EPS};
use iclforge_core::model::*;
use iclforge_core::seq::{build_standard, Episode};
use iclforge_core::{Error, Real, RngStream, Tensor};

fn vector_store(classes: usize, dim: usize) -> ExemplarStore {
    let spec = SyntheticSpec {
        classes,
        per_class: 20,
        kind: SyntheticKind::GaussianPrototype { dim },
        ..SyntheticSpec::default()
    };
    split_holdout(&gen_synthetic_store(&spec).unwrap(), 3, (18, 2), 1).unwrap()
}

fn random_input<F: Real>(cfg: &ModelConfig, episodes: usize, rng: &mut RngStream) -> BatchInput<F> {
    let n = episodes * (cfg.pairs + 1) * cfg.embedder.input_len();
    let ex = (0..n).map(|_| F::from_f64(rng.uniform())).collect();
    let labels = (0..episodes * cfg.pairs)
        .map(|_| rng.below(cfg.label_vocab) as u32)
        .collect();
    BatchInput::new(cfg.pairs, cfg.embedder.input_len(), ex, labels).unwrap()
}

fn tiny(embedder: EmbedderConfig) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        embed_dim: 8,
        label_vocab: 5,
        pairs: 2,
        embedder,
        init_std: 0.5,
    }
}

#[test]
fn probe_param_count_matches_hand_count() {
    let cfg = ModelConfig::probe(1600, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    // embedder 32*64 + 64; labels 1600*64; positions 17*64;
    // per block: 2*64 + (64*192 + 192) + (64*64 + 64) + 2*64 + (64*256 + 256) + (256*64 + 64);
    // final norm 2*64; head 64*1600 + 1600.
    let block = 128 + 12_480 + 4_160 + 128 + 16_640 + 16_448;
    let hand = 2_112 + 102_400 + 1_088 + 3 * block + 128 + 104_000;
    assert_eq!(cfg.param_count(), hand);
    assert_eq!(hand, 359_680);
    let m = Model::<f32>::init(&cfg, 0).unwrap();
    assert_eq!(m.param_count(), hand);
    let full = ModelConfig::full(1600, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    assert_eq!(full.param_count(), hand + 9 * block);
}

#[test]
fn init_is_deterministic_and_truncated() {
    let cfg = ModelConfig::probe(100, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    let a = Model::<f32>::init(&cfg, 7).unwrap();
    let b = Model::<f32>::init(&cfg, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, Model::<f32>::init(&cfg, 8).unwrap());
    for (name, t) in a.names().iter().zip(a.params()) {
        if name.ends_with(".g") {
            assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
        } else if name.ends_with(".b") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        } else {
            assert!(t.data().iter().all(|&v| v.abs() <= 0.04 + 1e-7), "{name}");
            let n = t.len() as f64;
            let mean: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var: f64 = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            if t.len() > 1000 {
                // std of a normal truncated at two std is 0.8796 of the original
                assert!((var.sqrt() - 0.02 * 0.8796).abs() < 0.0015, "{name} std {}", var.sqrt());
            }
        }
    }
    let bad = ModelConfig { heads: 3, ..cfg.clone() };
    assert!(matches!(Model::<f32>::init(&bad, 0), Err(Error::Config(_))));
    let twelve = ModelConfig::full(100, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    assert!(Model::<f32>::init(&twelve, 0).is_ok());
}

#[test]
fn full_mode_logit_shape_and_label_range() {
    let cfg = ModelConfig::probe(50, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    let m = Model::<f32>::init(&cfg, 1).unwrap();
    let mut rng = RngStream::new(1, 1);
    let input = random_input::<f32>(&cfg, 3, &mut rng);
    let mut tape = Tape::new();
    m.forward(&input, Mode::Full, &mut tape).unwrap();
    assert_eq!(tape.logit_rows(), 17);
    assert_eq!(tape.logits().len(), 3 * 17 * 50);
    m.forward(&input, Mode::LastToken, &mut tape).unwrap();
    assert_eq!(tape.logits().len(), 3 * 50);
    let mut labels = input.labels(0).to_vec();
    labels[0] = 50;
    let bad = BatchInput::new(8, 32, input.exemplar(0, 0).repeat(9), labels).unwrap();
    assert!(matches!(
        m.forward(&bad, Mode::LastToken, &mut tape),
        Err(Error::LabelRange { label: 50, vocab: 50 })
    ));
}

#[test]
fn later_tokens_never_affect_earlier_logits() {
    let cfg = ModelConfig {
        heads: 2,
        ..ModelConfig::probe(20, 8, EmbedderConfig::LinearVector { input_dim: 32 })
    };
    let m = Model::<f32>::init(&cfg, 3).unwrap();
    let mut rng = RngStream::new(2, 2);
    let mut tape = Tape::new();
    for _ in 0..50 {
        let input = random_input::<f32>(&cfg, 1, &mut rng);
        m.forward(&input, Mode::Full, &mut tape).unwrap();
        let before = tape.logits().to_vec();
        let pos = rng.below(17);
        let mut changed = input.clone();
        if pos.is_multiple_of(2) {
            changed.exemplar_mut(0, pos / 2).iter_mut().for_each(|v| *v += 1.0);
        } else {
            let mut labels = input.labels(0).to_vec();
            labels[pos / 2] = (labels[pos / 2] + 1) % 20;
            changed = BatchInput::new(8, 32, (0..9).flat_map(|s| input.exemplar(0, s).to_vec()).collect(), labels)
                .unwrap();
        }
        m.forward(&changed, Mode::Full, &mut tape).unwrap();
        let after = tape.logits();
        assert_eq!(before[..pos * 20], after[..pos * 20], "position {pos}");
        assert_ne!(before[pos * 20..], after[pos * 20..]);
    }
}

#[test]
fn modes_and_capture_agree_on_query_logits() {
    let s = vector_store(40, 32);
    let cfg = ModelConfig::probe(37, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    let m = Model::<f32>::init(&cfg, 4).unwrap();
    let table = iclforge_core::data::class_sampler(&s, iclforge_core::data::ZipfSpec::UNIFORM).unwrap();
    let mut rng = RngStream::new(3, 3);
    let eps: Vec<Episode> = (0..5).map(|_| build_standard(&s, &table, 8, &mut rng).unwrap()).collect();
    let input = BatchInput::from_episodes(&s, &eps).unwrap();
    let mut a = Tape::new();
    let mut b = Tape::new();
    m.forward(&input, Mode::LastToken, &mut a).unwrap();
    m.forward(&input, Mode::Full, &mut b).unwrap();
    for e in 0..5 {
        assert_eq!(a.last_logits(e), b.last_logits(e));
        let (trace, logits) = capture_trace(&m, &s, &eps[e]).unwrap();
        assert_eq!(logits.row(16), a.last_logits(e));
        assert_eq!(trace.tokens(), 17);
        assert_eq!((trace.layers(), trace.heads()), (3, 1));
        assert_eq!(trace.matrix(2, 0), b.attention(e, 2, 0, 1).to_vec());
    }
}

#[test]
fn attention_rows_are_causal_distributions() {
    let cfg = ModelConfig {
        heads: 4,
        ..ModelConfig::probe(20, 8, EmbedderConfig::LinearVector { input_dim: 8 })
    };
    let mut rng = RngStream::new(4, 4);
    let mut tape = Tape::new();
    for i in 0..100 {
        let m = Model::<f32>::init(&ModelConfig { init_std: 0.3, ..cfg.clone() }, i).unwrap();
        let input = random_input::<f32>(&cfg, 10, &mut rng);
        m.forward(&input, Mode::Full, &mut tape).unwrap();
        for b in 0..10 {
            let tr = AttentionTrace::from_tape(&tape, b, 3, 4, false);
            for l in 0..3 {
                for h in 0..4 {
                    for r in 0..17 {
                        let row = &tr.matrix(l, h)[r * 17..(r + 1) * 17];
                        let sum: f64 = row.iter().map(|&v| v as f64).sum();
                        assert!((sum - 1.0).abs() <= 1e-5);
                        assert!(row[r + 1..].iter().all(|&v| v == 0.0));
                        assert!(row.iter().all(|&v| v >= 0.0));
                    }
                }
            }
        }
    }
}

fn model_grad_error<F: Real>(cfg: &ModelConfig, seed: u64, mode: Mode, eps: F) -> F {
    let mut rng = RngStream::new(seed, 9);
    let input = random_input::<F>(cfg, 2, &mut rng);
    let targets: Vec<u32> = (0..2).map(|_| rng.below(cfg.label_vocab) as u32).collect();
    let base = Model::<F>::init(cfg, seed).unwrap();
    let mut worst = F::ZERO;
    for i in 0..base.params().len() {
        let mut m = base.clone();
        let mut tape = Tape::new();
        let err = grad_check(
            |x: &Tensor<F>| {
                m.params_mut()[i] = x.clone();
                m.forward(&input, mode, &mut tape).unwrap();
                let (loss, dl) = tape.last_token_loss(&targets).unwrap();
                let mut g = m.zero_grads();
                m.backward(&tape, &dl, &mut g).unwrap();
                (loss, g.swap_remove(i))
            },
            &base.params()[i].clone(),
            eps,
        );
        if std::env::var("GC_VERBOSE").is_ok() {
            eprintln!("{} {:e}", base.names()[i], err.to_f64());
        }
        worst = worst.max(err);
    }
    worst
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = tiny(EmbedderConfig::LinearVector { input_dim: 3 });
    for mode in [Mode::LastToken, Mode::Full] {
        let err = model_grad_error::<f64>(&cfg, 5, mode, DEFAULT_EPS);
        assert!(err < 1e-2, "{mode:?}: {err}");
    }
}

#[test]
fn conv_embedder_gradient_matches_finite_differences() {
    let cfg = tiny(EmbedderConfig::ConvRaster {
        height: 5,
        width: 6,
        widths: vec![2, 3],
    });
    let err = model_grad_error::<f64>(&cfg, 6, Mode::LastToken, DEFAULT_EPS);
    assert!(err < 1e-2, "{err}");
}

#[test]
fn single_precision_gradient_agrees_with_double() {
    let cfg = ModelConfig {
        init_std: 0.1,
        ..ModelConfig::probe(30, 8, EmbedderConfig::LinearVector { input_dim: 16 })
    };
    let mut rng = RngStream::new(7, 7);
    let input = random_input::<f64>(&cfg, 4, &mut rng);
    let targets = [1u32, 2, 3, 4];
    let m64 = Model::<f64>::init(&cfg, 7).unwrap();
    let m32: Model<f32> = m64.cast();
    let in32 = BatchInput::new(
        8,
        16,
        (0..4 * 9)
            .flat_map(|i| input.exemplar(i / 9, i % 9).iter().map(|&v| v as f32))
            .collect(),
        (0..4).flat_map(|e| input.labels(e).to_vec()).collect(),
    )
    .unwrap();
    let mut t64 = Tape::new();
    m64.forward(&input, Mode::LastToken, &mut t64).unwrap();
    let (_, d64) = t64.last_token_loss(&targets).unwrap();
    let mut g64 = m64.zero_grads();
    m64.backward(&t64, &d64, &mut g64).unwrap();
    let mut t32 = Tape::new();
    m32.forward(&in32, Mode::LastToken, &mut t32).unwrap();
    let (_, d32) = t32.last_token_loss(&targets).unwrap();
    let mut g32 = m32.zero_grads();
    m32.backward(&t32, &d32, &mut g32).unwrap();
    for ((a, b), name) in g64.iter().zip(&g32).zip(m64.names()) {
        let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - *y as f64).abs()));
        assert!(diff <= 1e-3 * scale.max(1e-6), "{name}: {diff} vs {scale}");
    }
}

#[test]
fn masking_non_final_logits_changes_no_gradient() {
    let cfg = ModelConfig::probe(11, 4, EmbedderConfig::LinearVector { input_dim: 6 });
    let m = Model::<f32>::init(&cfg, 8).unwrap();
    let mut rng = RngStream::new(8, 8);
    let input = random_input::<f32>(&cfg, 3, &mut rng);
    let targets = [0u32, 5, 10];
    let mut ta = Tape::new();
    m.forward(&input, Mode::LastToken, &mut ta).unwrap();
    let (la, da) = ta.last_token_loss(&targets).unwrap();
    let mut ga = m.zero_grads();
    m.backward(&ta, &da, &mut ga).unwrap();
    let mut tb = Tape::new();
    m.forward(&input, Mode::Full, &mut tb).unwrap();
    let (lb, db) = tb.last_token_loss(&targets).unwrap();
    let mut gb = m.zero_grads();
    m.backward(&tb, &db, &mut gb).unwrap();
    assert_eq!(la, lb);
    for (a, b) in ga.iter().zip(&gb) {
        assert!(a.max_abs_diff(b) <= 1e-9, "{}", a.max_abs_diff(b));
    }
}

#[test]
fn episode_embedding_layout() {
    let s = vector_store(40, 32);
    let cfg = ModelConfig::probe(37, 8, EmbedderConfig::LinearVector { input_dim: 32 });
    let m = Model::<f32>::init(&cfg, 9).unwrap();
    let table = iclforge_core::data::class_sampler(&s, iclforge_core::data::ZipfSpec::UNIFORM).unwrap();
    let mut rng = RngStream::new(9, 9);
    let mut ep = build_standard(&s, &table, 8, &mut rng).unwrap();
    let pos = m.param("pos_emb").unwrap();
    let strip = |e: &Tensor<f32>| -> Vec<Vec<f32>> {
        (0..17)
            .map(|r| e.row(r).iter().zip(pos.row(r)).map(|(a, b)| a - b).collect())
            .collect()
    };
    let base = embed_episode(&m, &s, &ep).unwrap();
    assert_eq!(base.shape(), &[17, 64]);
    let rows = strip(&base);
    let lab = m.param("label_emb").unwrap();
    for (i, (_, l)) in ep.context.iter().enumerate() {
        let want: Vec<f32> = lab.row(*l as usize).to_vec();
        for (a, b) in rows[2 * i + 1].iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    ep.context.swap(1, 4);
    let swapped = strip(&embed_episode(&m, &s, &ep).unwrap());
    let close = |a: &[f32], b: &[f32]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6);
    for r in 0..17 {
        let src = match r {
            2 => 8,
            3 => 9,
            8 => 2,
            9 => 3,
            r => r,
        };
        assert!(close(&swapped[r], &rows[src]), "row {r}");
    }
    ep.context[0].0 = ep.query;
    let copied = strip(&embed_episode(&m, &s, &ep).unwrap());
    assert!(close(&copied[0], &copied[16]));
}

#[test]
fn conv_embedder_shapes_and_finiteness() {
    let cfg = ModelConfig::probe(10, 1, EmbedderConfig::conv(64, 64));
    let m = Model::<f32>::init(&cfg, 10).unwrap();
    let mut tape = Tape::new();
    let zeros = BatchInput::new(1, 4096, vec![0.0f32; 2 * 4096], vec![0]).unwrap();
    m.forward(&zeros, Mode::Full, &mut tape).unwrap();
    let e1 = tape.embedded()[..64].to_vec();
    m.forward(&zeros, Mode::Full, &mut tape).unwrap();
    assert_eq!(&tape.embedded()[..64], &e1[..]);
    // zero input with zero biases leaves only position 0 in the first token
    assert_eq!(e1, m.param("pos_emb").unwrap().row(0));

    let cfg = ModelConfig::probe(10, 1, EmbedderConfig::conv(28, 28));
    let m = Model::<f32>::init(&cfg, 11).unwrap();
    let mut rng = RngStream::new(10, 10);
    for _ in 0..500 {
        let x: Vec<f32> = (0..2 * 784).map(|_| rng.uniform() as f32).collect();
        let input = BatchInput::new(1, 784, x, vec![3]).unwrap();
        m.forward(&input, Mode::LastToken, &mut tape).unwrap();
        assert!(tape.embedded().iter().all(|v| v.is_finite()));
        assert!(tape.logits().iter().all(|v| v.is_finite()));
    }
}
