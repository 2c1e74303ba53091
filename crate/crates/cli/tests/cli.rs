use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[data.synthetic]
num_classes = 3
per_class = 12
image_side = 8

[extractor]
trained = false

[oracle]
floor = 0.5

[oracle.classifier]
epochs = 4

[train]
n_iter = 6
batch_size = 8
eval_every = 3

[train.generator]
noise_dim = 4
hidden = 16
channels = 4

[train.discriminator]
width = 4

[eval]
samples = 24
snapshot_samples = 12
checkpoint_every = 3
"#;

fn ucgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ucgan"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (tmp, cfg)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_eval_writes_the_run_layout() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(&ucgan(tmp.path(), &["train", "-c", cfg, "--name", "a"]));
    let run = tmp.path().join("runs/a");
    for f in [
        "manifest.json",
        "curves.csv",
        "report.txt",
        "checkpoints/iter-00000003.ckpt",
        "checkpoints/iter-00000006.ckpt",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3, "header plus one row per snapshot");

    let out = ucgan(tmp.path(), &["eval", "-c", cfg, "--name", "a"]);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("iteration=6\n"), "{stdout}");
    assert!(stdout.contains("accuracy="));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert!(manifest["finished_unix"].is_u64());
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert!(files.contains(&"report.txt") && files.contains(&"checkpoints/iter-00000006.ckpt"));
}

#[test]
fn malformed_config_exits_2_before_touching_disk() {
    let (tmp, cfg) = setup();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nn_iter = \"many\"\n").unwrap();
    for args in [
        vec!["train", "-c", bad.to_str().unwrap()],
        vec!["train", "-c", cfg.to_str().unwrap(), "--set", "train.batch_size=0"],
        vec!["train", "-c", cfg.to_str().unwrap(), "--set", "train.nonsense=1"],
        vec!["train", "-c", "does-not-exist.toml"],
        vec!["no-such-command"],
    ] {
        let out = ucgan(tmp.path(), &args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(!tmp.path().join("runs").exists());

    let out = ucgan(tmp.path(), &["train", "-c", bad.to_str().unwrap()]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("train.n_iter"), "{stderr}");
}

#[test]
fn stats_rejects_k_beyond_the_sample_count() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let out = ucgan(tmp.path(), &["stats", "-c", cfg, "--set", "stats.ks=[1, 36]"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("runs").exists());

    let out = ucgan(tmp.path(), &["stats", "-c", cfg, "--set", "stats.features=\"one-hot\""]);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.ends_with("100.0%")).count(), 3, "{stdout}");
}

#[test]
fn rerunning_a_manifest_reproduces_checkpoints() {
    let (tmp, cfg) = setup();
    ok(&ucgan(
        tmp.path(),
        &["train", "-c", cfg.to_str().unwrap(), "--name", "first"],
    ));
    ok(&ucgan(
        tmp.path(),
        &["train", "-c", "runs/first/manifest.json", "--name", "second"],
    ));
    let ckpt =
        |name: &str| std::fs::read(tmp.path().join(format!("runs/{name}/checkpoints/iter-00000006.ckpt"))).unwrap();
    assert_eq!(ckpt("first"), ckpt("second"));
    let report = |name: &str| std::fs::read_to_string(tmp.path().join(format!("runs/{name}/report.txt"))).unwrap();
    assert_eq!(report("first"), report("second"));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let (tmp, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(&ucgan(tmp.path(), &["train", "-c", cfg, "--name", "whole"]));
    ok(&ucgan(
        tmp.path(),
        &["train", "-c", cfg, "--name", "split", "--set", "train.n_iter=3"],
    ));
    // Resuming under a different config is refused.
    let out = ucgan(tmp.path(), &["train", "-c", cfg, "--name", "split", "--resume"]);
    assert_eq!(out.status.code(), Some(2));

    let split = tmp.path().join("runs/split/checkpoints");
    let whole = tmp.path().join("runs/whole/checkpoints");
    std::fs::remove_file(split.join("iter-00000003.ckpt")).unwrap();
    std::fs::copy(whole.join("iter-00000003.ckpt"), split.join("iter-00000003.ckpt")).unwrap();
    ok(&ucgan(tmp.path(), &["train", "-c", cfg, "--name", "split", "--resume"]));
    assert_eq!(
        std::fs::read(split.join("iter-00000006.ckpt")).unwrap(),
        std::fs::read(whole.join("iter-00000006.ckpt")).unwrap()
    );
}

#[test]
fn inputs_are_left_untouched() {
    let (tmp, cfg) = setup();
    let cfg_s = cfg.to_str().unwrap();
    ok(&ucgan(tmp.path(), &["ingest", "-c", cfg_s, "--name", "src"]));
    let data = tmp.path().join("runs/src/data");
    let images = data.join("images-idx3-ubyte");
    let labels = data.join("labels-idx1-ubyte");
    let before = [
        std::fs::read(&images).unwrap(),
        std::fs::read(&labels).unwrap(),
        std::fs::read(&cfg).unwrap(),
    ];

    let idx = tmp.path().join("idx.toml");
    let text = SMALL.replace(
        "[data.synthetic]",
        &format!(
            "[data]\nsource = \"idx\"\n\n[data.idx]\nimages = {:?}\nlabels = {:?}\n\n[data.synthetic]",
            images.to_str().unwrap(),
            labels.to_str().unwrap()
        ),
    );
    std::fs::write(&idx, text).unwrap();
    let idx = idx.to_str().unwrap();
    ok(&ucgan(tmp.path(), &["stats", "-c", idx, "--name", "idx"]));
    ok(&ucgan(tmp.path(), &["train", "-c", idx, "--name", "idx"]));

    let after = [
        std::fs::read(&images).unwrap(),
        std::fs::read(&labels).unwrap(),
        std::fs::read(&cfg).unwrap(),
    ];
    assert_eq!(before, after);

    // Ingesting the exported files again reproduces them byte for byte.
    ok(&ucgan(tmp.path(), &["ingest", "-c", idx, "--name", "again"]));
    let again = tmp.path().join("runs/again/data");
    assert_eq!(std::fs::read(again.join("images-idx3-ubyte")).unwrap(), before[0]);
    assert_eq!(std::fs::read(again.join("labels-idx1-ubyte")).unwrap(), before[1]);
}

#[test]
fn help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ucgan(tmp.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("export-embedding"));
}
