use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &[&str] = &[
    "--set",
    "data.per_class=30",
    "--set",
    "data.target_per_class=30",
    "--set",
    "data.test_per_class=10",
    "--set",
    "train.pretrain_iterations=20",
    "--set",
    "train.cycles=2",
    "--set",
    "train.steps=4",
    "--set",
    "mcd.iterations=3",
];

fn ubr2s(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubr2s")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ubr2s(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn quick(cmd: &str, extra: &[&str]) -> Vec<String> {
    std::iter::once(cmd)
        .chain(QUICK.iter().copied())
        .chain(extra.iter().copied())
        .map(String::from)
        .collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "reweigh = sl\ndss.adapt = none\nseed = 4\n").unwrap();
    let path = cfg.to_str().unwrap();
    let text = ok(&["show-config", "--config", path]);
    assert!(text.contains("reweigh = sl") && text.contains("seed = 4"));
    let text = ok(&["show-config", "--config", path, "--reweigh", "de", "--dss-ada", "target", "--seed", "9"]);
    assert!(text.contains("reweigh = de\n"));
    assert!(text.contains("dss.adapt = target"));
    assert!(text.contains("seed = 9"));
}

#[test]
fn bad_values_name_the_key() {
    for (args, key) in [
        (vec!["show-config", "--reweigh", "bogus"], "reweigh"),
        (vec!["show-config", "--dss-pre", "target"], "dss.pretrain"),
        (vec!["show-config", "--set", "data.noise=abc"], "data.noise"),
        (vec!["show-config", "--set", "model.width=3"], "model.width"),
        (vec!["run", "--set", "mcd.iterations=1"], "mcd.iterations"),
    ] {
        let out = ubr2s(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{args:?}: {err}");
    }
}

#[test]
fn run_writes_reports_and_checkpoints_that_eval_reads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = quick("run", &["--seeds", "2", "--out", out]);
    let stdout = ok(&refs(&args));
    assert!(stdout.contains("±"), "{stdout}");
    let run_dir = fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    for name in ["config.txt", "summary.json", "seed-0.jsonl", "seed-1.jsonl", "seed-0-pretrain.ckpt", "seed-1-adapted.ckpt"] {
        assert!(run_dir.join(name).exists(), "missing {name}");
    }
    let jsonl = fs::read_to_string(run_dir.join("seed-0.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.first().unwrap()["record"], "manifest");
    assert_eq!(records.last().unwrap()["record"], "result");
    assert_eq!(records.iter().filter(|r| r["record"] == "cycle").count(), 2);

    let first = jsonl.clone();
    ok(&refs(&args));
    assert_eq!(fs::read_to_string(run_dir.join("seed-0.jsonl")).unwrap(), first);

    let gen_dir = dir.path().join("data");
    let gen = quick("generate", &["--out", gen_dir.to_str().unwrap()]);
    ok(&refs(&gen));
    let target = gen_dir.join("blobs-seed0-target.ds");
    assert!(target.exists());
    let ckpt = run_dir.join("seed-0-adapted.ckpt");
    let text = ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", target.to_str().unwrap()]);
    assert!(text.contains("accuracy"), "{text}");
}

fn ablation_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn ablation_resumes_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = quick("ablate", &["--out", out]);
    let first = ok(&refs(&args));
    assert!(first.contains("8 cells (0 resumed)"), "{first}");
    assert_eq!(ablation_rows(&dir.path().join("ablation-dss.tsv")), 8);
    let second = ok(&refs(&args));
    assert!(second.contains("8 cells (8 resumed)"), "{second}");
}
