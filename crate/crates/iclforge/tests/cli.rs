use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iclforge::csvio::{read_metric_rows, read_ngram_rows, read_probe_rows};
use iclforge::run::Manifest;

fn iclforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iclforge"))
        .args(args)
        .env("ICLFORGE_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = iclforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    iclforge(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 20] = [
    "--set",
    "store.classes=40",
    "--set",
    "train.total_steps=200",
    "--set",
    "train.warmup_steps=50",
    "--set",
    "train.eval_every=100",
    "--set",
    "train.seeds=[0, 1]",
    "--set",
    "eval.suite_size=300",
    "--set",
    "eval.iwl_suite_size=300",
    "--set",
    "probe.every=100",
    "--set",
    "probe.episodes=20",
    "--set",
    "model.init_std=0.2",
];

fn train_small(out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "desk-scale", "--out", p(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.exb1");
    let b = dir.path().join("b.exb1");
    let flags = ["--kind", "gaussian", "--classes", "50", "--per-class", "20", "--dim", "32", "--seed", "7"];
    let run = |out: &Path| {
        let mut args = vec!["gen-data"];
        args.extend_from_slice(&flags);
        args.extend_from_slice(&["--out", p(out)]);
        ok(&args)
    };
    let sa = run(&a);
    let sb = run(&b);
    assert_eq!(sa, sb);
    assert!(sa.starts_with("classes=50 exemplars=1000 kind=vector-32 sha256="), "{sa}");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let glyph = dir.path().join("g.exb1");
    let s = ok(&["gen-data", "--kind", "glyph", "--classes", "3", "--per-class", "2", "--out", p(&glyph)]);
    assert!(s.contains("kind=raster-28x28"));
}

#[test]
fn gen_data_imports_pgm_directories() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    for c in 0..3 {
        let class_dir = src.join(format!("class{c}"));
        std::fs::create_dir_all(&class_dir).unwrap();
        for i in 0..2 {
            let mut bytes = b"P5\n6 4\n255\n".to_vec();
            bytes.extend((0..24).map(|v| (v * 7 + c * 40 + i) as u8));
            std::fs::write(class_dir.join(format!("{i}.pgm")), bytes).unwrap();
        }
    }
    let out = dir.path().join("imp.exb1");
    let s = ok(&["gen-data", "--import", p(&src), "--out", p(&out)]);
    assert!(s.starts_with("classes=3 exemplars=6 kind=raster-4x6"), "{s}");
    assert_eq!(code(&["gen-data", "--import", p(&src), "--classes", "4", "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--import", p(&dir.path().join("missing")), "--out", p(&out)]), 3);
    assert_eq!(code(&["gen-data", "--classes", "0", "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--bogus", "--out", p(&out)]), 2);
}

fn metrics_bytes(run: &Path) -> Vec<u8> {
    std::fs::read(run.join("metrics.csv")).unwrap()
}

#[test]
fn train_eval_probe_round() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = train_small(&run, &[]);
    assert!(out.starts_with(&format!("run={} store_sha256=", run.display())), "{out}");
    assert!(out.contains("seed=1 step=200 split=icl-2w4s"));

    let manifest = Manifest::load(&run.join("manifest.toml")).unwrap();
    assert_eq!(manifest.label_vocab, 40);
    assert_eq!(manifest.suites.len(), 3);
    assert_eq!(manifest.config.train.seeds, vec![0, 1]);

    let rows = read_metric_rows(&run.join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.step % 100 == 0));
    let mut splits: Vec<&str> = rows.iter().map(|r| r.split.as_str()).collect();
    splits.sort_unstable();
    splits.dedup();
    for s in ["icl-2w4s", "icl-4w2s", "iwl-acc", "train-loss", "probe-label-image-L2H0"] {
        assert!(splits.contains(&s), "{s} missing from {splits:?}");
    }
    assert!(!rows.iter().any(|r| r.split == "train-loss" && r.step == 0));

    // identical config and seeds: byte-identical metrics
    let again = dir.path().join("again");
    train_small(&again, &[]);
    assert_eq!(metrics_bytes(&run), metrics_bytes(&again));

    // interrupted then resumed: byte-identical to the uninterrupted run
    let resumed = dir.path().join("resumed");
    train_small(&resumed, &["--stop-after", "100"]);
    assert_ne!(metrics_bytes(&run), metrics_bytes(&resumed));
    train_small(&resumed, &["--resume"]);
    assert_eq!(metrics_bytes(&run), metrics_bytes(&resumed));
    for seed in ["0", "1"] {
        let ck = |r: &Path| std::fs::read(r.join("seeds").join(seed).join("latest.iclf")).unwrap();
        assert_eq!(ck(&run), ck(&resumed));
    }
    assert_eq!(code(&["train", "desk-scale", "--out", p(&run)]), 2);

    // eval: both tasks on one checkpoint, identical on repeat
    let ck = run.join("seeds/1/step-00000200.iclf");
    let before = read_metric_rows(&run.join("metrics.csv")).unwrap().len();
    let a = ok(&["eval", p(&run), "--suite", "icl-4w2s", "--checkpoint", p(&ck)]);
    let b = ok(&["eval", p(&run), "--suite", "icl-4w2s", "--checkpoint", p(&ck)]);
    assert_eq!(a, b);
    assert!(a.starts_with("200,1,icl-4w2s,"));
    let suite_file = run.join("suites/icl-2w4s.icls");
    let c = ok(&["eval", p(&run), "--suite", p(&suite_file), "--checkpoint", p(&ck)]);
    let trained = rows.iter().find(|r| r.seed == 1 && r.step == 200 && r.split == "icl-2w4s").unwrap();
    assert_eq!(c.trim(), format!("200,1,icl-2w4s,{}", trained.value));
    let after = read_metric_rows(&run.join("metrics.csv")).unwrap();
    assert_eq!(after.len(), before + 3);
    assert_eq!(after[before].value, after[before + 1].value);
    assert_eq!(code(&["eval", p(&run), "--suite", "icl-9w9s", "--checkpoint", p(&ck)]), 2);
    assert_eq!(code(&["eval", p(&run), "--suite", "icl-2w4s", "--checkpoint", p(&run.join("nope.iclf"))]), 3);

    // probe: one row per checkpoint, layer, head and metric
    let s = ok(&["probe", p(&run), "--trace-episodes", "2", "--seeds", "0"]);
    assert!(s.contains("rows=36"), "{s}");
    let probe = read_probe_rows(&run.join("probe.csv")).unwrap();
    assert_eq!(probe.len(), 3 * 3 * 4);
    assert!(probe.iter().all(|r| (0.0..=1.0).contains(&r.value) && r.head == 0 && r.layer < 3));
    let trained_li = rows
        .iter()
        .find(|r| r.seed == 0 && r.step == 200 && r.split == "probe-label-image-L1H0")
        .unwrap();
    let probed_li = probe
        .iter()
        .find(|r| r.step == 200 && r.layer == 1 && r.metric == "label-image")
        .unwrap();
    assert_eq!(trained_li.value, probed_li.value);
    let trace = run.join("traces/seed-0/step-00000100/episode-00001");
    for f in ["L0H0.csv", "L2H0.csv", "roles.csv"] {
        assert!(trace.join(f).exists(), "{f}");
    }
    let all = ok(&["probe", p(&run), "--out", p(&dir.path().join("all.csv"))]);
    assert!(all.contains("rows=72"), "{all}");

    // a modified store no longer matches the manifest
    let store = run.join("store.exb1");
    let mut bytes = std::fs::read(&store).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&store, bytes).unwrap();
    assert_eq!(code(&["eval", p(&run), "--suite", "icl-4w2s", "--checkpoint", p(&ck)]), 5);
    assert_eq!(code(&["probe", p(&run)]), 5);
}

#[test]
fn train_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = iclforge::config::ExperimentConfig::profile("desk-scale").unwrap().to_toml();
    std::fs::write(&cfg, text.replace("max_lr", "max_lrr")).unwrap();
    assert_eq!(code(&["train", p(&cfg)]), 2);
    assert_eq!(code(&["train", "no-such-profile"]), 3);
    assert_eq!(code(&["train", "desk-scale", "--set", "model.heads=3"]), 2);
    let blown = dir.path().join("blown");
    let mut args = vec!["train", "desk-scale", "--out", p(&blown)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "model.init_std=1e37"]);
    let out = iclforge(&args);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

fn brute_repetitions(window: &[u32], n: usize) -> usize {
    let grams: Vec<&[u32]> = window.windows(n).collect();
    (0..grams.len()).filter(|&i| grams[..i].contains(&grams[i])).count()
}

#[test]
fn ngram_report_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let tokens: Vec<u32> = (0..500u32).map(|i| (i * i + 3 * i) % 7).collect();
    let path = dir.path().join("t.txt");
    let text: Vec<String> = tokens.iter().map(u32::to_string).collect();
    std::fs::write(&path, text.join(" ")).unwrap();
    let out = dir.path().join("r.csv");
    ok(&["ngram", p(&path), "--window", "64", "--ns", "1,5,20", "--out", p(&out)]);
    let rows = read_ngram_rows(&out).unwrap();
    assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![1, 5, 20]);
    for r in &rows {
        assert_eq!(r.window, 64);
        assert_eq!(r.windows_counted, 7);
        let total: usize = tokens.chunks_exact(64).map(|w| brute_repetitions(w, r.n)).sum();
        assert!((r.avg_repetitions - total as f64 / 7.0).abs() < 1e-12);
    }
    let default = ok(&["ngram", p(&path), "--window", "100"]);
    assert_eq!(default.lines().count(), 1 + 7);
    assert!(default.starts_with("n,window,avg_repetitions,windows_counted\n1,100,"));

    let bin = dir.path().join("t.bin");
    std::fs::write(&bin, tokens.iter().flat_map(|t| t.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
    assert_eq!(ok(&["ngram", p(&bin), "--window", "100"]), default);
    assert_eq!(code(&["ngram", p(&dir.path().join("missing.bin"))]), 3);
    assert_eq!(code(&["ngram", p(&path), "--window", "0"]), 2);
    assert_eq!(code(&["ngram", p(&path), "--format", "csv"]), 2);
}

fn write_sweep(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("sweep.toml");
    std::fs::write(
        &path,
        format!(
            r#"base = "desk-scale"
dir = "out"

[axes]
recipe = ["standard", "bursty-copy"]

[set.store]
classes = 30
{extra}
[set.train]
total_steps = 100
warmup_steps = 50
eval_every = 50
seeds = [0]

[set.eval]
suite_size = 100
iwl_suite_size = 100

[set.probe]
every = 0
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn sweep_runs_children_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_sweep(dir.path(), "");
    let s = ok(&["sweep", p(&path)]);
    assert!(s.contains("children=2"), "{s}");
    let table = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(table.starts_with("child,classes,p_label_swap,recipe,zipf,status,split,final_step,final_mean,peak_step,peak_mean\n"));
    assert!(table.lines().any(|l| l.starts_with("standard,,,standard,,ok,icl-2w4s,100,")));
    assert!(dir.path().join("out/bursty-copy/metrics.csv").exists());

    let bad = tempfile::tempdir().unwrap();
    let path = write_sweep(bad.path(), "source = \"file\"\npath = \"missing.exb1\"\n");
    let out = iclforge(&["sweep", p(&path)]);
    assert_eq!(out.status.code(), Some(6), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(bad.path().join("out/standard/error.txt").exists());
}
