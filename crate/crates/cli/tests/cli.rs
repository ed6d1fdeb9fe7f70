use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ctmos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctmos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "embedding_dim=8\nlayers=16\nmixtures=2\nrank=4\nepochs=2\nbatch=4\nbptt=10\n\
dropout_input=0.1\ndropout_hidden=0.1\ndropout_output=0.2\n";

/// Synthetic raw text, a prepared corpus and a tiny model config.
fn workspace() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let corpus = dir.path().join("corpus");
    let o = ctmos(&["synth", "--out", s(&raw), "--tokens", "2500", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ctmos(&["preprocess", "--in", s(&raw), "--out", s(&corpus), "--cap", "300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    (dir, corpus, cfg)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn metrics_without_time(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
        .collect()
}

#[test]
fn preprocess_writes_identical_files() {
    let (dir, corpus, _) = workspace();
    for name in ["vocab.tsv", "train.txt", "valid.txt", "test.txt", "manifest.cfg"] {
        assert!(corpus.join(name).exists(), "{name}");
    }
    let again = dir.path().join("again");
    let raw = dir.path().join("raw");
    let o = ctmos(&["preprocess", "--in", s(&raw), "--out", s(&again), "--cap", "300"]);
    assert!(o.status.success());
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(n, _)| n != "manifest.cfg").collect()
    };
    assert_eq!(strip(snapshot(&corpus)), strip(snapshot(&again)));
    assert_eq!(fs::read_to_string(corpus.join("vocab.tsv")).unwrap().lines().count(), 300);
}

#[test]
fn training_is_reproducible_and_leaves_inputs_alone() {
    let (dir, corpus, cfg) = workspace();
    let before = snapshot(&corpus);
    let run = |name: &str, config: &Path| {
        let out = dir.path().join(name);
        let o = ctmos(&["train", "--config", s(config), "--corpus", s(&corpus), "--out", s(&out), "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", &cfg);
    let b = run("b", &cfg);
    assert_eq!(metrics_without_time(&a.join("metrics.tsv")), metrics_without_time(&b.join("metrics.tsv")));
    assert_eq!(fs::read(a.join("model.ctms")).unwrap(), fs::read(b.join("model.ctms")).unwrap());
    assert!(a.join("checkpoint-epoch001.ctms").exists());
    assert_eq!(snapshot(&corpus), before);

    let manifest = fs::read_to_string(a.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("subcommand=train"));
    assert!(manifest.contains("seed=1"));
    assert!(manifest.contains("embedding_dim=8"));
    let c = run("from-manifest", &a.join("manifest.cfg"));
    assert_eq!(fs::read(a.join("model.ctms")).unwrap(), fs::read(c.join("model.ctms")).unwrap());

    let o = ctmos(&["eval", "--checkpoint", s(&a.join("model.ctms")), "--corpus", s(&corpus), "--split", "test"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ppl: f64 = stdout(&o).trim().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(ppl > 1.0 && ppl < 300.0);

    let out = dir.path().join("cs");
    let o = ctmos(&[
        "analyze", "case-study", "--checkpoint", s(&a.join("model.ctms")), "--model-b",
        s(&a.join("checkpoint-epoch001.ctms")), "--corpus", s(&corpus), "--out", s(&out),
        "--context", "the cat sat", "--topk", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("case_study.tsv")).unwrap().lines().count(), 1 + 3 * 6);

    let out = dir.path().join("traj");
    let list = format!("{},{}", s(&a.join("checkpoint-epoch001.ctms")), s(&a.join("checkpoint-epoch002.ctms")));
    let o = ctmos(&[
        "analyze", "trajectories", "--checkpoint", &list, "--corpus", s(&corpus), "--out", s(&out),
        "--tokens", "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("trajectories.tsv")).unwrap().lines().count(), 11);

    let out = dir.path().join("pos");
    let o = ctmos(&[
        "analyze", "positions", "--checkpoint", s(&a.join("model.ctms")), "--corpus", s(&corpus),
        "--out", s(&out), "--split", "train",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("positions.tsv")).unwrap().lines().count(), 16);
}

#[test]
fn oracle_check_reports_agreement() {
    let o = ctmos(&["oracle", "check", "--samples", "1000", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("max_relative_error"))
        .unwrap()
        .to_string();
    let err: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-8);
}

#[test]
fn oracle_mesh_writes_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctmos(&["oracle", "mesh", "--out", s(dir.path()), "--resolution", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("logit-1.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("p,tau,gradient,baseline"));
    assert_eq!(csv.lines().count(), 37);
    assert!(dir.path().join("temperature-0-neg.csv").exists());
    assert!(dir.path().join("manifest.cfg").exists());
}

#[test]
fn constant_tau_ablation_table() {
    let (dir, corpus, cfg) = workspace();
    let out = dir.path().join("abl");
    let o = ctmos(&[
        "ablate", "constant-tau", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&out),
        "--taus", "0.5,1", "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["mos(tau=0.5)", "mos(tau=1)", "ct-mos(softmax)"]);
}

#[test]
fn errors_are_single_lines_with_exit_codes() {
    let usage = [
        vec!["frobnicate"],
        vec!["train", "--bogus-flag"],
        vec!["oracle"],
        vec!["oracle", "check", "--samples", "many"],
    ];
    for args in usage {
        let o = ctmos(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let e = stderr(&o);
        assert_eq!(e.lines().count(), 1, "{e}");
        assert!(e.starts_with("error: usage:"));
    }

    let (dir, corpus, cfg) = workspace();
    let [x, y, missing, z, m] = ["x", "y", "missing", "z", "m"].map(|n| dir.path().join(n));
    let invalid = [
        vec!["train", "--corpus", s(&corpus), "--out", s(&x), "--config", s(&cfg), "--variant", "nope"],
        vec!["train", "--corpus", s(&corpus), "--out", s(&y), "--lr=-1"],
        vec!["train", "--corpus", s(&missing), "--out", s(&z)],
        vec!["oracle", "mesh", "--out", s(&m), "--resolution", "1"],
    ];
    for args in invalid {
        let o = ctmos(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        let e = stderr(&o);
        assert_eq!(e.lines().count(), 1, "{e}");
        assert!(e.starts_with("error: "));
    }
}

#[test]
fn checkpoint_from_other_vocabulary_is_rejected() {
    let (dir, corpus, cfg) = workspace();
    let out = dir.path().join("run");
    let o = ctmos(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&out), "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let other = dir.path().join("other");
    let raw = dir.path().join("raw");
    let o = ctmos(&["preprocess", "--in", s(&raw), "--out", s(&other), "--cap", "100"]);
    assert!(o.status.success());
    let o = ctmos(&["eval", "--checkpoint", s(&out.join("model.ctms")), "--corpus", s(&other)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("digest"));
}
