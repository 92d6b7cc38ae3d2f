use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use legoqml_core::features::EmbeddingBlock;
use legoqml_harness::io::{read_dataset_csv, read_metrics_csv, read_json};
use legoqml_harness::runner::{Checkpoint, Manifest, CHECKPOINT_FILE, CONFIG_FILE, MANIFEST_FILE, METRICS_FILE};
use legoqml_harness::sweep::{read_sweep_csv, SWEEP_FILE};
use tempfile::TempDir;

const SMALL: &str = r#"
schema_version = 1
run_name = "small"
seed = 7

[dataset]
kind = "quantum-dot"
n = 40

[block]
kind = "pca"
dim = 2

[head]
kind = "vqc"
depth = 1

[train]
epochs = 3
batch_size = 8
lr = { kind = "fixed", value = 0.05 }
"#;

fn legoqml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_legoqml")).args(args).env("LEGOQML_THREADS", "1").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &Path, cfg_text: &str) -> (Output, PathBuf) {
    let cfg = write(dir, "cfg.toml", cfg_text);
    let out = dir.join("run");
    (legoqml(&["train", "--config", s(&cfg), "--out", s(&out)]), out)
}

#[test]
fn train_smoke_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let (o, out) = train(dir.path(), SMALL);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [METRICS_FILE, CHECKPOINT_FILE, MANIFEST_FILE, CONFIG_FILE] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert!(metrics.starts_with("# config_hash="));
    // Epoch 0 is the untrained model.
    assert_eq!(read_metrics_csv(&out.join(METRICS_FILE)).unwrap().len(), 4);
    let m: Manifest = read_json(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.param_count, 6);
    assert_eq!(m.block_checksum_before, m.block_checksum_after);
    assert_eq!(m.train_size + m.test_size, 40);
}

#[test]
fn missing_head_is_a_config_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace("[head]\nkind = \"vqc\"\ndepth = 1\n", "");
    let (o, _) = train(dir.path(), &text);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("head"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let (o, _) = train(dir.path(), &SMALL.replace("depth = 1", "depth = 1\ndepht = 2"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("depht"), "{}", stderr(&o));
}

#[test]
fn mismatched_qubits_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let (o, _) = train(dir.path(), &SMALL.replace("depth = 1", "depth = 1\nqubits = 5"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("head.qubits"), "{}", stderr(&o));
}

#[test]
fn tampered_checkpoint_is_an_invariant_violation() {
    let dir = TempDir::new().unwrap();
    let (o, out) = train(dir.path(), SMALL);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.path().join("cfg.toml");
    let ckpt = out.join(CHECKPOINT_FILE);

    let ok = legoqml(&["eval", "--checkpoint", s(&ckpt), "--config", s(&cfg)]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));

    let mut c: Checkpoint = read_json(&ckpt).unwrap();
    c.block_checksum = "0".repeat(64);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&c).unwrap()).unwrap();
    let o = legoqml(&["eval", "--checkpoint", s(&bad), "--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn exploding_learning_rate_exits_with_divergence() {
    let dir = TempDir::new().unwrap();
    let text = SMALL
        .replace("kind = \"vqc\"\ndepth = 1", "kind = \"fc\"")
        .replace("batch_size = 8", "batch_size = 1")
        .replace("value = 0.05 }", "value = 1e308 }\noptimizer = \"sgd\"");
    let (o, _) = train(dir.path(), &text);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn clap_usage_errors_exit_two() {
    assert_eq!(code(&legoqml(&["train", "--bogus"])), 2);
    assert_eq!(code(&legoqml(&["train"])), 2);
}

#[test]
fn gen_data_is_deterministic_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = legoqml(&["gen-data", "--kind", "tfbs", "--n", "20", "--mutations", "--seed", seed, "--out", s(&p)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(p).unwrap()
    };
    let a = run("a.csv", "3");
    assert_eq!(a, run("b.csv", "3"));
    assert_ne!(a, run("c.csv", "4"));
    let d = read_dataset_csv(&dir.path().join("a.csv")).unwrap();
    assert_eq!(d.len(), 20);
    assert_eq!(d.features[0].len(), 404);
}

#[test]
fn check_gradients_passes_quickly() {
    let t = Instant::now();
    let o = legoqml(&["check", "--suite", "gradients"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(t.elapsed().as_secs() < 60);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS gradients/parameter-shift agreement"));
}

#[test]
fn check_all_lists_every_item() {
    let o = legoqml(&["check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for item in [
        "gradients/parameter-shift agreement",
        "gradients/execution count",
        "channels/depolarizing contraction",
        "channels/readout scaling",
        "scaling/shot-noise slope",
        "scaling/cumulative noise law",
        "bounds/noisy bound",
        "bounds/cosine toy gap",
    ] {
        assert!(text.contains(item), "missing {item} in\n{text}");
    }
}

#[test]
fn zero_noise_sweep_matches_the_noiseless_run() {
    let dir = TempDir::new().unwrap();
    let (o, run) = train(dir.path(), SMALL);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.path().join("cfg.toml");
    let sweep = dir.path().join("sweep");
    let o = legoqml(&["sweep", "--config", s(&cfg), "--axis", "noise=0", "--seeds", "7", "--out", s(&sweep)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_sweep_csv(&sweep.join(SWEEP_FILE)).unwrap();
    assert_eq!(rows.len(), 1);
    let base = read_metrics_csv(&run.join(METRICS_FILE)).unwrap();
    let cell = read_metrics_csv(&sweep.join("runs/0_seed7").join(METRICS_FILE)).unwrap();
    assert_eq!(base, cell);
}

#[test]
fn head_sweep_records_parameter_counts_and_cells_rerun_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.toml", SMALL);
    let out = dir.path().join("sweep");
    let o = legoqml(&["sweep", "--config", s(&cfg), "--axis", "head=vqc,fc", "--seeds", "1,2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_sweep_csv(&out.join(SWEEP_FILE)).unwrap();
    let counts: BTreeMap<_, _> = rows.iter().map(|r| (r.axis_value.clone(), r.param_count)).collect();
    assert_eq!(counts["vqc"], 6);
    assert_eq!(counts["fc"], 6);
    assert_eq!(rows.len(), 4);

    // A cell's stored config reproduces that cell.
    let cell = out.join("runs/fc_seed2");
    let again = dir.path().join("again");
    let o = legoqml(&["train", "--config", s(&cell.join(CONFIG_FILE)), "--out", s(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(cell.join(METRICS_FILE)).unwrap(), std::fs::read(again.join(METRICS_FILE)).unwrap());
}

#[test]
fn budget_mismatch_needs_the_override_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.toml", &SMALL.replace("depth = 1", "depth = 3"));
    let out = dir.path().join("sweep");
    let base = ["sweep", "--config", s(&cfg), "--axis", "head=vqc,fc", "--out", s(&out)];
    let o = legoqml(&base);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
    let mut allowed = base.to_vec();
    allowed.push("--allow-budget-mismatch");
    assert_eq!(code(&legoqml(&allowed)), 0);
}

#[test]
fn embedding_block_trains_from_a_labels_file() {
    let dir = TempDir::new().unwrap();
    let mut table = BTreeMap::new();
    let mut labels = String::from("id,label\n");
    for id in 0..40u64 {
        let label = id % 2;
        let x = id as f64 / 40.0;
        table.insert(id, vec![if label == 1 { 1.0 + x } else { -1.0 - x }, x, 0.5]);
        labels.push_str(&format!("{id},{label}\n"));
    }
    let mut bytes = Vec::new();
    EmbeddingBlock::new(3, table, "test").unwrap().write(&mut bytes).unwrap();
    std::fs::write(dir.path().join("emb.bin"), bytes).unwrap();
    write(dir.path(), "labels.csv", &labels);
    let text = r#"
schema_version = 1
run_name = "emb"
seed = 3
[dataset]
kind = "labels"
path = "labels.csv"
[block]
kind = "embedding"
path = "emb.bin"
[head]
kind = "vqc"
depth = 2
[train]
epochs = 5
batch_size = 8
lr = { kind = "fixed", value = 0.05 }
"#;
    let (o, out) = train(dir.path(), text);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Manifest = read_json(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.block, "embedding");
    assert_eq!(m.param_count, 18);

    let o = legoqml(&["eval", "--checkpoint", s(&out.join(CHECKPOINT_FILE)), "--labels", s(&dir.path().join("labels.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // An id without an embedding is a data error.
    write(dir.path(), "missing.csv", "id,label\n99,0\n");
    let o = legoqml(&["eval", "--checkpoint", s(&out.join(CHECKPOINT_FILE)), "--labels", s(&dir.path().join("missing.csv"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn pretrained_ttn_checkpoint_feeds_a_frozen_block() {
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("src.csv");
    let o = legoqml(&["gen-data", "--n", "30", "--noise-level", "0.1", "--seed", "5", "--out", s(&src)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ttn = dir.path().join("ttn.bin");
    let o = legoqml(&[
        "pretrain-ttn",
        "--data",
        s(&src),
        "--in-modes",
        "5,10,10,5",
        "--out-modes",
        "1,2,2,1",
        "--ranks",
        "1,2,2,2,1",
        "--epochs",
        "2",
        "--out",
        s(&ttn),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let side: serde_json::Value = read_json(&dir.path().join("ttn.bin.json")).unwrap();
    assert!(side["config_hash"].is_string());

    let text = SMALL.replace(
        "kind = \"pca\"\ndim = 2",
        "kind = \"ttn\"\nin_modes = [5, 10, 10, 5]\nout_modes = [1, 2, 2, 1]\nranks = [1, 2, 2, 2, 1]\ncheckpoint = \"ttn.bin\"",
    );
    let (o, out) = train(dir.path(), &text);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Manifest = read_json(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.block, "ttn");
    assert_eq!(m.block_checksum_before, side["block_checksum"].as_str().unwrap());
    assert_eq!(m.block_checksum_before, m.block_checksum_after);

    // Shape disagreement between config and checkpoint is refused.
    let (o, _) = train(dir.path(), &text.replace("ranks = [1, 2, 2, 2, 1]", "ranks = [1, 3, 3, 3, 1]"));
    assert_ne!(code(&o), 0);
}

#[test]
fn fit_pca_writes_a_block_file() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    assert_eq!(code(&legoqml(&["gen-data", "--n", "20", "--out", s(&data)])), 0);
    let out = dir.path().join("pca.json");
    let o = legoqml(&["fit-pca", "--data", s(&data), "--dim", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = read_json(&out).unwrap();
    assert!(v["config_hash"].is_string());
    assert!(v.get("block").is_some());
}
