use iclforge_core::data::{
    class_sampler, gen_synthetic_store, split_holdout, ExemplarRef, ExemplarStore, SyntheticSpec, ZipfSpec,
};
use iclforge_core::model::{EmbedderConfig, Model, ModelConfig, Tape};
use iclforge_core::seq::*;
use iclforge_core::train::*;
use iclforge_core::{Error, RngStream};
use proptest::prelude::*;

fn store(classes: usize, novel: usize) -> ExemplarStore {
    let spec = SyntheticSpec {
        classes: classes + novel,
        per_class: 20,
        ..SyntheticSpec::default()
    };
    split_holdout(&gen_synthetic_store(&spec).unwrap(), novel, (18, 2), 0).unwrap()
}

fn probe_model(vocab: usize, pairs: usize) -> ModelConfig {
    ModelConfig::probe(vocab, pairs, EmbedderConfig::LinearVector { input_dim: 32 })
}

#[test]
fn schedule_values() {
    assert_eq!(lr_at(0, 15_000, 6e-4), 0.0);
    assert!((lr_at(15_000, 15_000, 6e-4) - 6e-4).abs() < 1e-15);
    assert!((lr_at(60_000, 15_000, 6e-4) - 3e-4).abs() < 1e-15);
    assert!((lr_at(7_500, 15_000, 6e-4) - 3e-4).abs() < 1e-15);
}

proptest! {
    #[test]
    fn schedule_continuous_and_decreasing(warm in 1u64..20_000, step in 0u64..200_000) {
        let jump = 6e-4 / warm as f64 + 1e-18;
        prop_assert!((lr_at(warm + 1, warm, 6e-4) - lr_at(warm, warm, 6e-4)).abs() <= jump);
        prop_assert!((lr_at(warm - 1, warm, 6e-4) - lr_at(warm, warm, 6e-4)).abs() <= jump);
        if step >= warm {
            prop_assert!(lr_at(step + 1, warm, 6e-4) < lr_at(step, warm, 6e-4));
        } else {
            prop_assert!(lr_at(step + 1, warm, 6e-4) > lr_at(step, warm, 6e-4));
        }
    }

    #[test]
    fn restricted_argmax_ignores_out_of_task_logits(
        logits in proptest::collection::vec(-5f32..5.0, 10),
        k in 1usize..10,
        shift in -100f32..100.0,
    ) {
        let mut shifted = logits.clone();
        shifted[k..].iter_mut().for_each(|v| *v += shift);
        prop_assert_eq!(predict(&logits, Prediction::Restricted(k)), predict(&shifted, Prediction::Restricted(k)));
        prop_assert!(predict(&logits, Prediction::Restricted(k)) < k);
    }
}

#[test]
fn first_step_loss_near_uniform() {
    let s = store(1600, 23);
    let t = class_sampler(&s, ZipfSpec::UNIFORM).unwrap();
    let sampler = BatchSampler {
        store: &s,
        table: &t,
        mix: TrainingMix::default(),
        recipe: Recipe::bursty(BurstFormat::high(), true),
        pairs: 8,
    };
    let cfg = TrainConfig::new(probe_model(1600, 8), sampler.recipe.clone(), 30_000);
    let mut tr = Trainer::new(Model::init(&cfg.model, 0).unwrap());
    let stats = train_step(&mut tr, &s, &sampler.batch(0, 1).unwrap(), 1, &cfg).unwrap();
    let ln_v = (1600f64).ln();
    assert!(((stats.loss as f64) - ln_v).abs() <= 0.1 * ln_v, "loss {}", stats.loss);
    assert_eq!(stats.lr, lr_at(1, 15_000, 6e-4));
    assert_eq!(tr.step_count(), 1);
}

#[test]
fn batch_size_is_checked() {
    let s = store(40, 3);
    let t = class_sampler(&s, ZipfSpec::UNIFORM).unwrap();
    let cfg = TrainConfig::new(probe_model(40, 8), Recipe::standard(), 100);
    let mut tr = Trainer::new(Model::init(&cfg.model, 0).unwrap());
    let batch = sample_training_batch(&s, &t, TrainingMix::default(), &cfg.recipe, 8, 0, 1).unwrap();
    assert!(matches!(
        train_step(&mut tr, &s, &batch[..15], 1, &cfg),
        Err(Error::Config(_))
    ));
}

fn loss_curve(seed: u64, steps: u64) -> Vec<f32> {
    let s = store(60, 3);
    let t = class_sampler(&s, ZipfSpec::UNIFORM).unwrap();
    let mut cfg = TrainConfig::new(probe_model(60, 8), Recipe::bursty(BurstFormat::high(), true), steps);
    cfg.warmup_steps = 10;
    let sampler = BatchSampler {
        store: &s,
        table: &t,
        mix: cfg.mix,
        recipe: cfg.recipe.clone(),
        pairs: 8,
    };
    let mut tr = Trainer::new(Model::init(&cfg.model, seed).unwrap());
    (1..=steps)
        .map(|step| train_step(&mut tr, &s, &sampler.batch(seed, step).unwrap(), step, &cfg).unwrap().loss)
        .collect()
}

#[test]
fn loss_curve_is_bit_identical_per_seed() {
    let a = loss_curve(3, 30);
    let b = loss_curve(3, 30);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, loss_curve(4, 30));
}

#[test]
fn untrained_models_sit_at_chance() {
    let s = store(1600, 23);
    let model = Model::<f32>::init(&probe_model(1600, 8), 0).unwrap();
    for (task, p) in [(EvalTask::TWO_WAY_FOUR_SHOT, 0.5), (EvalTask::FOUR_WAY_TWO_SHOT, 0.25)] {
        let suite = presample_suite(|r| build_icl_eval(&s, task, r), SuiteKind::Icl(task), 10_000, 1000).unwrap();
        let acc = evaluate_icl(&model, &s, &suite, false).unwrap();
        assert!((acc - p).abs() <= 0.02, "{task:?}: {acc}");
    }
    let iwl = presample_suite(|r| build_iwl_eval(&s, 8, r), SuiteKind::Iwl { pairs: 8 }, 10_000, 1001).unwrap();
    let acc = evaluate_iwl(&model, &s, &iwl).unwrap();
    let v = 1.0 / 1600.0;
    assert!((acc - v).abs() <= 3.0 * (v * (1.0 - v) / 10_000.0).sqrt() + 1e-4, "iwl {acc}");
}

#[test]
fn wrong_suite_kinds_are_rejected() {
    let s = store(40, 23);
    let model = Model::<f32>::init(&probe_model(40, 8), 0).unwrap();
    let task = EvalTask::TWO_WAY_FOUR_SHOT;
    let icl = presample_suite(|r| build_icl_eval(&s, task, r), SuiteKind::Icl(task), 10, 1).unwrap();
    let mut iwl = presample_suite(|r| build_iwl_eval(&s, 8, r), SuiteKind::Iwl { pairs: 8 }, 10, 2).unwrap();
    assert!(matches!(evaluate_iwl(&model, &s, &icl), Err(Error::Eval(_))));
    assert!(matches!(evaluate_icl(&model, &s, &iwl, false), Err(Error::Eval(_))));
    let q = iwl.episodes[0].query;
    iwl.episodes[0].context[0].0 = q;
    assert!(matches!(evaluate_iwl(&model, &s, &iwl), Err(Error::Eval(_))));
}

#[test]
fn two_class_toy_store_is_memorized() {
    let s = store(2, 0);
    let mut cfg = TrainConfig::new(probe_model(2, 2), Recipe::standard(), 2_000);
    cfg.warmup_steps = 100;
    cfg.max_lr = 1e-3;
    let mut tr = Trainer::new(Model::init(&cfg.model, 0).unwrap());
    let mut rng = RngStream::new(5, 0);
    for step in 1..=2_000 {
        let batch: Vec<Episode> = (0..16).map(|_| toy_episode(&s, &mut rng)).collect();
        train_step(&mut tr, &s, &batch, step, &cfg).unwrap();
    }
    let seen: Vec<Episode> = (0..200).map(|_| toy_episode(&s, &mut rng)).collect();
    let correct = count_correct(&tr.model, &s, &seen, Prediction::Full, &mut Tape::new()).unwrap();
    assert_eq!(correct, 200);
}

fn toy_episode(s: &ExemplarStore, rng: &mut RngStream) -> Episode {
    let base = s.base_classes();
    let mut pick = || {
        let label = rng.below(base.len());
        let ids = s.train_exemplars(base[label]);
        (ExemplarRef::new(base[label] as usize, ids[rng.below(ids.len())] as usize), label as u32)
    };
    let context = vec![pick(), pick()];
    let (query, target) = pick();
    Episode {
        context,
        query,
        target,
        provenance: Provenance {
            kind: EpisodeKind::Standard,
            swapped: false,
            inst_copy: false,
        },
        remap: Vec::new(),
    }
}

#[test]
fn aggregate_examples() {
    let mut one = MetricLog::new();
    one.push(10, 0, "icl-2w4s", 0.7).unwrap();
    let a = aggregate_runs(std::slice::from_ref(&one)).unwrap();
    assert_eq!((a[0].mean, a[0].std, a[0].runs), (0.7, 0.0, 1));

    let mut two = MetricLog::new();
    two.push(10, 1, "icl-2w4s", 0.4).unwrap();
    let mut three = MetricLog::new();
    three.push(10, 2, "icl-2w4s", 0.6).unwrap();
    let a = aggregate_runs(&[two.clone(), three]).unwrap();
    assert!((a[0].mean - 0.5).abs() < 1e-12 && (a[0].std - 0.1).abs() < 1e-12);

    let mut off = MetricLog::new();
    off.push(20, 5, "icl-2w4s", 0.4).unwrap();
    match aggregate_runs(&[one, two, off]) {
        Err(Error::Aggregate { seeds, .. }) => assert_eq!(seeds, vec![5]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn aggregate_matches_recomputation() {
    let mut rng = RngStream::new(9, 0);
    let logs: Vec<MetricLog> = (0..3)
        .map(|seed| {
            let mut l = MetricLog::new();
            for step in (0..=5).map(|i| i * 100) {
                for split in ["icl-2w4s", "iwl-acc", "train-loss"] {
                    l.push(step, seed, split, rng.uniform()).unwrap();
                }
            }
            l
        })
        .collect();
    let agg = aggregate_runs(&logs).unwrap();
    assert_eq!(agg.len(), 18);
    for row in &agg {
        let vals: Vec<f64> = logs
            .iter()
            .flat_map(|l| l.rows().iter().filter(|r| r.step == row.step && r.split == row.split).map(|r| r.value))
            .collect();
        let mean = vals.iter().sum::<f64>() / 3.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!((row.mean - mean).abs() < 1e-12);
        assert!((row.std - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn metric_steps_must_increase() {
    let mut l = MetricLog::new();
    l.push(5, 0, "train-loss", 1.0).unwrap();
    l.push(5, 1, "train-loss", 1.0).unwrap();
    assert!(matches!(l.push(5, 0, "train-loss", 1.0), Err(Error::Series(_))));
    l.push(10, 0, "train-loss", 0.5).unwrap();
    l.truncate_after(5);
    assert_eq!(l.len(), 2);
    l.push(10, 0, "train-loss", 0.5).unwrap();
}
