use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use helm_core::model::{ModelConfig, Variant};

fn helm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helm"))
        .args(args)
        .output()
        .expect("run helm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, variant: Variant, steps: usize) -> PathBuf {
    let mut cfg = ModelConfig::micro(variant);
    cfg.seq_len = 16;
    cfg.train.steps = steps;
    cfg.train.batch_size = 2;
    cfg.train.checkpoint_every = 5;
    let path = dir.join("tiny.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn write_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.txt");
    fs::write(&path, "the quick brown fox jumps over the lazy dog. ".repeat(40)).unwrap();
    path
}

/// Trains a short run and returns its directory.
fn train(dir: &Path, variant: Variant, steps: usize) -> PathBuf {
    let cfg = write_config(dir, variant, steps);
    let corpus = write_corpus(dir);
    let runs = dir.join("runs");
    let o = helm(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--runs",
        runs.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = PathBuf::from(stdout(&o).trim());
    assert_eq!(run, runs.join("tiny"));
    run
}

#[test]
fn train_writes_metrics_checkpoints_and_manifest() {
    let t = tempfile::tempdir().unwrap();
    let run = train(t.path(), Variant::HelmMice, 12);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with("step,loss,lr,grad_norm,max_manifold_violation,expert_load_0"));
    // The first layer keeps a dense feed-forward block.
    assert_eq!(lines[0].split(',').count(), 5 + 4);
    assert!(lines[1].starts_with("0,"));
    for name in ["ckpt-5.bin", "ckpt-10.bin", "ckpt-12.bin", "manifest.json"] {
        assert!(run.join(name).exists(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["corpus"]["bytes"], 45 * 40);
    assert_eq!(manifest["corpus"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn resume_continues_the_metrics() {
    let t = tempfile::tempdir().unwrap();
    let run = train(t.path(), Variant::HelmD, 12);
    let full = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let ck = run.join("ckpt-5.bin");
    let o = helm(&[
        "train",
        "--config",
        t.path().join("tiny.json").to_str().unwrap(),
        "--corpus",
        t.path().join("corpus.txt").to_str().unwrap(),
        "--runs",
        t.path().join("runs").to_str().unwrap(),
        "--resume",
        ck.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap(), full);
}

#[test]
fn generate_inspect_ricci_and_probe_on_a_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let run = train(t.path(), Variant::HelmD, 5);
    let ck = run.join("ckpt-5.bin");
    let ck = ck.to_str().unwrap();

    let cached = helm(&["generate", "--ckpt", ck, "--prompt", "the", "--n", "6", "--ids"]);
    let full = helm(&["generate", "--ckpt", ck, "--prompt", "the", "--n", "6", "--ids", "--no-cache"]);
    assert!(cached.status.success(), "{}", stderr(&cached));
    assert_eq!(stdout(&cached), stdout(&full));
    assert_eq!(stdout(&cached).split_whitespace().count(), 6);

    let inspect = helm(&["inspect-checkpoint", ck]);
    assert!(inspect.status.success());
    let text = stdout(&inspect);
    assert!(text.contains("step: 5"));
    assert!(text.contains("embed\t259x16"));

    let out = t.path().join("edges.csv");
    let ricci = helm(&["ricci", "--input", ck, "--k", "4", "--bins", "5", "--out", out.to_str().unwrap()]);
    assert!(ricci.status.success(), "{}", stderr(&ricci));
    assert!(stdout(&ricci).starts_with("nodes=259 k=4 edges="));
    assert!(fs::read_to_string(&out).unwrap().starts_with("i,j,kappa\n"));
    let hist = fs::read_to_string(t.path().join("edges.hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 6);

    let words = t.path().join("words.txt");
    fs::write(&words, "# probe\nanimals: cat, dog\nobjects: mat, box\n").unwrap();
    let probe = helm(&["norm-probe", "--ckpt", ck, "--words", words.to_str().unwrap()]);
    assert!(probe.status.success(), "{}", stderr(&probe));
    let lines: Vec<String> = stdout(&probe).lines().map(String::from).collect();
    assert_eq!(lines[0], "group,avg_norm,min,max");
    assert!(lines[1].starts_with("animals,"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn verify_single_and_all() {
    let one = helm(&["verify", "--prop", "3", "--r", "5"]);
    assert!(one.status.success(), "{}", stdout(&one));
    assert!(stdout(&one).contains("[PASS]"));
    let all = helm(&["verify", "--all"]);
    assert!(all.status.success());
    assert!(stdout(&all).trim_end().ends_with("0 failed"));
    assert_eq!(helm(&["verify", "--prop", "1", "--r", "2"]).status.code(), Some(2));
}

#[test]
fn bench_cache_table() {
    let o = helm(&["bench-cache", "--preset", "small-mice"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("768"));
    assert!(text.contains("80"));
    assert_eq!(helm(&["bench-cache", "--preset", "micro-d"]).status.code(), Some(2));
}

#[test]
fn ricci_on_text_embeddings() {
    let t = tempfile::tempdir().unwrap();
    let input = t.path().join("points.txt");
    let rows: Vec<String> = (0..12).map(|i| format!("{} {}", i % 4, i / 4)).collect();
    fs::write(&input, rows.join("\n")).unwrap();
    let out = t.path().join("k.csv");
    let o = helm(&["ricci", "--input", input.to_str().unwrap(), "--k", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("nodes=12"));
}

#[test]
fn errors_map_to_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&ModelConfig::micro(Variant::HelmD).to_json()).unwrap();
    cfg["layerz"] = 3.into();
    fs::write(&bad, cfg.to_string()).unwrap();
    let corpus = write_corpus(t.path());
    let o = helm(&["train", "--config", bad.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("layerz"));

    let junk = t.path().join("junk.txt");
    fs::write(&junk, "1 2 3\n4 five 6\n").unwrap();
    let out = t.path().join("o.csv");
    let o = helm(&["ricci", "--input", junk.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = helm(&["train", "--preset", "micro-d", "--corpus", t.path().join("none").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(helm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(helm(&["inspect-checkpoint", junk.to_str().unwrap()]).status.code(), Some(2));
}
