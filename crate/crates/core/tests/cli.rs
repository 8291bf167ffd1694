use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "per_domain=40\nd_in=6\nlabeled_target_per_class=5\nembed_dim=8\nlstm_hidden=4\n\
                     batch_source=5\nbatch_target=4\nbatch_auxiliary=30\nepochs=2\nseed=3\n";

fn derwent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derwent"))
        .args(args)
        .env_remove("DERWENT_SEED")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.conf");
    fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_writes_a_reconstructible_run() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("run");
    let o = derwent(&["train", "--config", &conf, "--out-dir", out.to_str().unwrap(), "--dump-graph"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "metrics.csv", "checkpoint.bin", "dataset.csv", "paths.json", "paths.svg", "graph.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,step,l1,l2,l3,objective,walks_reached_s2t,walks_reached_t2s,target_test_acc\n"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 8);
    let graph = fs::read_to_string(out.join("graph.csv")).unwrap();
    assert_eq!(graph.lines().count(), 40);

    // The snapshot alone reproduces the run.
    let again = dir.path().join("again");
    let snapshot = out.join("config.txt").display().to_string();
    let o = derwent(&["train", "--config", &snapshot, "--out-dir", again.to_str().unwrap()]);
    assert!(o.status.success());
    for f in ["metrics.csv", "checkpoint.bin", "paths.json", "paths.svg", "dataset.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs");
    }

    // Eval on the checkpoint reports the training summary's accuracy.
    let ckpt = out.join("checkpoint.bin").display().to_string();
    let o = derwent(&["eval", "--config", &snapshot, "--checkpoint", &ckpt]);
    assert!(o.status.success());
    let eval: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(eval["target_test_accuracy"], summary["target_test_accuracy"]);
    assert_eq!(eval["epoch"], 2);

    // The dataset file loads back as training data.
    let from_file = dir.path().join("from_file");
    let data = out.join("dataset.csv").display().to_string();
    let o = derwent(&["train", "--config", &snapshot, "--data", &data, "--out-dir", from_file.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(from_file.join("metrics.csv")).unwrap());
}

#[test]
fn svg_is_valid_xml() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("run");
    assert!(derwent(&["train", "--config", &conf, "--out-dir", out.to_str().unwrap()]).status.success());
    let svg = fs::read_to_string(out.join("paths.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(!svg.contains("href"));
    let records: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out.join("paths.json")).unwrap()).unwrap();
    let nodes = doc.descendants().filter(|n| n.attribute("class") == Some("node")).count();
    let expected: usize = records.iter().map(|r| r["instance_ids"].as_array().unwrap().len()).sum();
    assert_eq!(nodes, expected);

    let ckpt = out.join("checkpoint.bin").display().to_string();
    let p = dir.path().join("paths");
    let o = derwent(&["paths", "--config", &conf, "--checkpoint", &ckpt, "--out-dir", p.to_str().unwrap()]);
    assert!(o.status.success());
    roxmltree::Document::parse(&fs::read_to_string(p.join("paths.svg")).unwrap()).unwrap();
}

#[test]
fn baseline_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("b");
    let o = derwent(&["baseline", "--config", &conf, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("baseline.json")).unwrap()).unwrap();
    assert_eq!(report["source_used"], 0);
    assert_eq!(report["auxiliary_used"], 0);

    let sweep = |name: &str| {
        let d = dir.path().join(name);
        let o = derwent(&["sweep", "--config", &conf, "--set", "epochs=1", "--axis", "alpha", "--values", "1,3,5", "--out-dir", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(d.join("sweep_alpha.csv")).unwrap()
    };
    let a = sweep("s1");
    assert_eq!(a.lines().count(), 4);
    assert_eq!(a, sweep("s2"));
}

#[test]
fn seed_environment_variable_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let run = |seed: Option<&str>, flag: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_derwent"));
        cmd.args(["train", "--config", &conf, "--set", "epochs=1", "--out-dir", out.to_str().unwrap()]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        match seed {
            Some(s) => cmd.env("DERWENT_SEED", s),
            None => cmd.env_remove("DERWENT_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(out.join("config.txt")).unwrap()
    };
    assert!(run(None, None, "a").contains("\nseed=3\n"));
    assert!(run(Some("8"), None, "b").contains("\nseed=8\n"));
    assert!(run(Some("8"), Some("5"), "c").contains("\nseed=5\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(derwent(&["train", "--config", &conf, "--alpha", "-1", "--out-dir", o]).status.code(), Some(2));
    assert_eq!(derwent(&["train", "--config", &conf, "--set", "colour=red", "--out-dir", o]).status.code(), Some(2));
    assert_eq!(derwent(&["sweep", "--config", &conf, "--axis", "gamma", "--values", "1,2", "--out-dir", o]).status.code(), Some(2));
    assert_eq!(derwent(&["frobnicate"]).status.code(), Some(2));

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, format!("{SMALL}command=eval\n")).unwrap();
    assert_eq!(derwent(&["train", "--config", bad.to_str().unwrap(), "--out-dir", o]).status.code(), Some(2));

    // Weights scaled far enough to overflow the first step fail numerically.
    let huge = dir.path().join("huge.conf");
    fs::write(&huge, format!("{SMALL}lr_feature=1e300\n")).unwrap();
    assert_eq!(derwent(&["train", "--config", huge.to_str().unwrap(), "--out-dir", o]).status.code(), Some(3));

    let missing = dir.path().join("missing.bin");
    let code = derwent(&["eval", "--config", &conf, "--checkpoint", missing.to_str().unwrap()]).status.code();
    assert_eq!(code, Some(1));
}
