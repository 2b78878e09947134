use std::path::Path;

use iclforge::config::{parse_task, task_name, ExperimentConfig, PROFILES};
use iclforge::core::seq::EvalTask;
use iclforge::sweep::{apply_overrides, burst_format, parse_override, RecipeName, SweepConfig};
use iclforge::Error;

fn desk() -> ExperimentConfig {
    ExperimentConfig::profile("desk-scale").unwrap()
}

#[test]
fn paper_defaults_profile_carries_the_published_hyperparameters() {
    let cfg = ExperimentConfig::profile("paper-defaults").unwrap();
    let t = &cfg.train;
    assert_eq!((t.adam_beta1, t.adam_beta2, t.adam_eps), (0.9, 0.99, 1e-8));
    assert_eq!((t.warmup_steps, t.max_lr, t.clip_norm), (15_000, 6e-4, 1.0));
    assert_eq!(cfg.mix.batch_size, 16);
    assert_eq!((cfg.model.layers, cfg.model.heads, cfg.model.embed_dim), (12, 8, 64));
    assert_eq!(cfg.model.conv_widths, vec![64, 128, 256]);
    assert_eq!(cfg.model.pairs, 8);
    assert_eq!(cfg.store.classes + cfg.store.novel, 1623);
    assert_eq!(cfg.store.validation_per_class, 2);
    assert_eq!(t.seeds.len(), 3);
}

#[test]
fn desk_scale_profile() {
    let cfg = desk();
    assert_eq!((cfg.model.layers, cfg.model.heads, cfg.model.embed_dim), (3, 1, 64));
    assert_eq!((cfg.store.classes, cfg.store.dim, cfg.store.noise), (1600, 32, 0.1));
    assert_eq!((cfg.train.total_steps, cfg.train.warmup_steps), (30_000, 1_500));
    assert_eq!(cfg.mix.p_bursty, 0.9);
    assert_eq!(cfg.eval_tasks().unwrap(), vec![EvalTask::TWO_WAY_FOUR_SHOT, EvalTask::FOUR_WAY_TWO_SHOT]);
}

#[test]
fn every_profile_round_trips_through_toml() {
    for (name, _) in PROFILES {
        let cfg = ExperimentConfig::profile(name).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
    assert!(matches!(ExperimentConfig::profile("nope"), Err(Error::Config(_))));
}

#[test]
fn unknown_and_missing_keys_are_rejected() {
    let text = desk().to_toml();
    let typo = text.replace("max_lr", "max_rl");
    assert!(matches!(ExperimentConfig::parse(&typo), Err(Error::Config(_))));
    let extra = text.replace("[train]", "[train]\nlearning_rate = 1.0");
    assert!(matches!(ExperimentConfig::parse(&extra), Err(Error::Config(_))));
    let extra_section = format!("{text}\n[extra]\nx = 1\n");
    assert!(matches!(ExperimentConfig::parse(&extra_section), Err(Error::Config(_))));
    let missing = text.replace("clip_norm = 1.0\n", "");
    assert!(matches!(ExperimentConfig::parse(&missing), Err(Error::Config(_))));
}

fn rejects(f: impl FnOnce(&mut ExperimentConfig)) -> bool {
    let mut cfg = desk();
    f(&mut cfg);
    cfg.validate().is_err()
}

#[test]
fn validation() {
    assert!(desk().validate().is_ok());
    assert!(rejects(|c| c.model.heads = 3));
    assert!(rejects(|c| c.train.warmup_steps = 40_000));
    assert!(rejects(|c| c.train.eval_every = 7));
    assert!(rejects(|c| c.train.adam_beta2 = 0.999));
    assert!(rejects(|c| c.mix.p_bursty = 1.5));
    assert!(rejects(|c| c.probe.every = 1500));
    assert!(rejects(|c| c.probe.task = "3w3s".into()));
    assert!(rejects(|c| c.eval.tasks = vec!["5w5s".into()]));
    assert!(rejects(|c| c.recipe.format = "3xQ-3xA".into()));
    assert!(rejects(|c| c.train.seeds.clear()));
}

#[test]
fn task_names() {
    assert_eq!(parse_task("2w4s").unwrap(), EvalTask::TWO_WAY_FOUR_SHOT);
    assert_eq!(parse_task("4w2s").unwrap(), EvalTask::FOUR_WAY_TWO_SHOT);
    let t = parse_task("3w3s").unwrap();
    assert_eq!((t.ways, t.shots), (3, 3));
    assert_eq!(task_name(t), "3w3s");
    for bad in ["2w", "w4s", "0w4s", "2x4s", ""] {
        assert!(parse_task(bad).is_err(), "{bad}");
    }
}

#[test]
fn overrides() {
    let cfg = desk();
    let over = parse_override("train.total_steps=2000").unwrap();
    let changed = apply_overrides(&cfg, &over).unwrap();
    assert_eq!(changed.train.total_steps, 2000);
    let over = parse_override("output.dir=elsewhere").unwrap();
    assert_eq!(apply_overrides(&cfg, &over).unwrap().output.dir, Path::new("elsewhere"));
    let over = parse_override("train.seeds=[4, 5]").unwrap();
    assert_eq!(apply_overrides(&cfg, &over).unwrap().train.seeds, vec![4, 5]);
    assert!(parse_override("no-equals").is_err());
    let typo = parse_override("train.total_stepz=5").unwrap();
    assert!(matches!(apply_overrides(&cfg, &typo), Err(Error::Config(_))));
}

#[test]
fn burst_formats() {
    assert_eq!(burst_format(true, 8), "3xQ-3xA-B-C");
    assert_eq!(burst_format(false, 8), "Q-A-B-C-D-E-F-G");
    let mut cfg = desk();
    RecipeName::Standard.apply(&mut cfg);
    assert_eq!(cfg.recipe().unwrap(), iclforge::core::seq::Recipe::standard());
    RecipeName::BurstyLowCopy.apply(&mut cfg);
    cfg.validate().unwrap();
    assert!(cfg.recipe.inst_copy);
}

#[test]
fn sweep_grid_expansion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.toml");
    std::fs::write(
        &path,
        r#"
base = "desk-scale"
dir = "out"

[axes]
classes = [200, 400]
p_label_swap = [0.0, 0.2]
recipe = ["bursty", "bursty-copy"]

[set.train]
total_steps = 2000
"#,
    )
    .unwrap();
    let sweep = SweepConfig::load(&path).unwrap();
    assert_eq!(sweep.dir, dir.path().join("out"));
    let kids = sweep.children().unwrap();
    assert_eq!(kids.len(), 8);
    assert_eq!(kids[0].name, "classes-200_swap-0_bursty");
    assert_eq!(kids[7].name, "classes-400_swap-0.2_bursty-copy");
    for k in &kids {
        assert_eq!(k.config.train.total_steps, 2000);
        assert_eq!(k.config.output.dir, dir.path().join("out").join(&k.name));
        assert_eq!(Some(k.config.store.classes), k.classes);
    }
    assert!(kids[1].config.recipe.inst_copy && !kids[0].config.recipe.inst_copy);

    std::fs::write(&path, "base = \"desk-scale\"\ndir = \"o\"\n[axes]\nclasses = [0]\n").unwrap();
    assert!(SweepConfig::load(&path).unwrap().children().is_err());
    std::fs::write(&path, "base = \"desk-scale\"\ndir = \"o\"\nbogus = 1\n[axes]\n").unwrap();
    assert!(matches!(SweepConfig::load(&path), Err(Error::Config(_))));
}
