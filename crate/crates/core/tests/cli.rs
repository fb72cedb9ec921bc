use chanex::harness::{BENCH_CSV_HEADER, EVAL_CSV_HEADER};
use std::path::Path;
use std::process::{Command, Output};

fn chanex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chanex"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = chanex(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &[&str] = &[
    "--set",
    "model.embed_dim=8",
    "--set",
    "model.heads=2",
    "--set",
    "model.encoder_depth=1",
    "--set",
    "model.decoder_depth=1",
    "--set",
    "model.decoder_dim=8",
    "--set",
    "ce.schedule.total_epochs=2",
    "--set",
    "ce.schedule.warmup_epochs=1",
    "--set",
    "ce.batch_size=8",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(TINY).copied().collect()
}

#[test]
fn pipeline_from_generate_to_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "data.bin", "--seed", "3", "-n", "30"]);
    ok(d, &["train-c2p", "data.bin", "c2p.ckpt", "--seed", "4", "--set", "c2p.epochs=2", "--set", "c2p.hidden=16"]);
    assert!(d.join("c2p.ckpt.history.csv").exists());
    let history = std::fs::read_to_string(d.join("c2p.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,train_loss,test_loss,lr"));

    ok(d, &with_tiny(&["train-ce", "data.bin", "fused.ckpt", "--seed", "5", "--c2p", "c2p.ckpt"]));
    ok(d, &with_tiny(&["train-ce", "data.bin", "base.ckpt", "--seed", "5", "--set", "model.fusion=\"baseline\""]));

    let csv = ok(d, &["eval", "fused.ckpt", "data.bin", "--c2p", "c2p.ckpt", "--percentages", "10,25"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], EVAL_CSV_HEADER);
    assert_eq!(lines.len(), 3);

    let csv = ok(
        d,
        &["ablate", "data.bin", "fused.ckpt", "base.ckpt", "--axis", "fusion-variant", "--c2p", "c2p.ckpt", "--percentages", "5,10,20"],
    );
    assert_eq!(csv.lines().count(), 1 + 2 * 3);

    ok(
        d,
        &["bench", "fused.ckpt", "base.ckpt", "data.bin", "--c2p", "c2p.ckpt", "--runs", "3", "--warmup", "1", "--percentages", "10", "-o", "bench.csv"],
    );
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().next(), Some(BENCH_CSV_HEADER));
    assert_eq!(bench.lines().count(), 2);
}

#[test]
fn seed_is_mandatory_for_generate_and_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(!chanex(d, &["generate", "data.bin"]).status.success());
    assert!(!d.join("data.bin").exists());
    ok(d, &["generate", "data.bin", "--seed", "1", "-n", "4"]);
    assert!(!chanex(d, &["train-c2p", "data.bin", "c2p.ckpt"]).status.success());
    assert!(!chanex(d, &["train-ce", "data.bin", "ce.ckpt", "--bypass-c2p"]).status.success());
}

#[test]
fn fused_training_without_feature_source_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "data.bin", "--seed", "1", "-n", "4"]);
    let out = chanex(d, &with_tiny(&["train-ce", "data.bin", "ce.ckpt", "--seed", "2"]));
    assert!(!out.status.success());
    assert!(!d.join("ce.ckpt").exists());
}

#[test]
fn config_file_and_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("exp.toml"), "[generate.carrier]\nn_subcarriers = 16\n").unwrap();
    ok(d, &["generate", "a.bin", "--seed", "1", "-n", "2", "-c", "exp.toml"]);
    ok(d, &["generate", "b.bin", "--seed", "1", "-n", "2", "-c", "exp.toml", "--set", "generate.carrier.n_subcarriers=8"]);
    let a = chanex::dataset::Dataset::load(d.join("a.bin")).unwrap();
    let b = chanex::dataset::Dataset::load(d.join("b.bin")).unwrap();
    assert_eq!(a.carrier.n_subcarriers, 16);
    assert_eq!(b.carrier.n_subcarriers, 8);
    assert!(!chanex(d, &["generate", "c.bin", "--seed", "1", "--set", "generate.nonsense=1"]).status.success());
}
